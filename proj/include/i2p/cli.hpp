#pragma once

// Command-line front end. Every command is callable in-process through run().

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "i2p/evaluation.hpp"

namespace i2p::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumeric = 4 };

// args excludes the program name, e.g. {"gen", "--seed", "7", "--out", "ds"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

// Thread cap from I2P_THREADS; 0 when unset. Throws ConfigError if malformed.
int threads_from_env();

// `query_id,rank,candidate_id,similarity` rows; rank is 1-based.
std::string rankings_csv(const std::vector<evaluation::RetrievalResult>& results);
std::vector<evaluation::RetrievalResult> parse_rankings_csv(const std::string& text);

}  // namespace i2p::cli
