#include "i2p/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "i2p/config.hpp"
#include "i2p/datapipe.hpp"
#include "i2p/errors.hpp"
#include "i2p/io.hpp"
#include "i2p/kernels.hpp"
#include "i2p/model.hpp"
#include "i2p/svg.hpp"
#include "i2p/train.hpp"

namespace i2p::cli {

namespace fs = std::filesystem;
using evaluation::Id;
using evaluation::RetrievalResult;

int threads_from_env() {
    const char* v = std::getenv("I2P_THREADS");
    if (!v || !*v) return 0;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 4096) throw ConfigError(std::string("I2P_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<int>(n);
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

double to_double(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw DataError("bad number '" + s + "' in " + what);
    return v;
}

Id to_id(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || s.front() == '-') throw DataError("bad id '" + s + "' in " + what);
    return static_cast<Id>(v);
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Runs f(i) for i in [0, n) in parallel; rethrows the exception of the lowest failing index.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::thread_cap())
    for (std::size_t i = 0; i < n; ++i) {
        try {
            f(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Profile defaults, then the config file, then flags (applied by the caller).
config::RunConfig base_config(const std::optional<std::string>& config_path, const std::optional<std::string>& profile,
                              const fs::path& fallback = {}) {
    if (config_path) {
        if (!profile) return config::load(*config_path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(io::read_text(*config_path));
        } catch (const nlohmann::json::exception& ex) {
            throw ConfigError("malformed config " + *config_path + ": " + ex.what());
        }
        auto cfg = config::from_json(j, config::profile(*profile));
        cfg.profile = *profile;
        return cfg;
    }
    if (!profile && !fallback.empty() && fs::exists(fallback)) return config::load(fallback);
    return config::profile(profile.value_or("desk"));
}

evaluation::Split read_split(const fs::path& path) {
    try {
        const auto j = nlohmann::json::parse(io::read_text(path));
        return {j.at("query").get<std::vector<Id>>(), j.at("database").get<std::vector<Id>>()};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

struct ModelBundle {
    config::RunConfig cfg;
    model::ModelParams<float> params;
};

ModelBundle load_model(const fs::path& dir) {
    ModelBundle b{config::load(dir / "config.json"), {}};
    b.params = model::from_named(io::load_checkpoint(dir / "model.json"), b.cfg.model);
    return b;
}

std::vector<model::SampleInput> prepare_inputs(const std::vector<datapipe::PairSample>& pairs,
                                               const model::ModelConfig& mcfg) {
    std::vector<model::SampleInput> inputs(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
        const auto& p = pairs[i];
        inputs[i].id = p.pose.id;
        inputs[i].patches = model::prepare_image(p.image, mcfg);
        inputs[i].cloud = model::prepare_cloud(p.cloud, mcfg, p.pose.id);
    });
    return inputs;
}

bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
    const auto e = p.extension().string();
    return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

// --- gen --------------------------------------------------------------------

struct GenOptions {
    std::optional<std::string> config, profile, trajectory;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> poses, landmarks;
    std::optional<double> spacing, step;
    std::string out;
};

int cmd_gen(const GenOptions& o, std::ostream& out) {
    auto cfg = base_config(o.config, o.profile);
    if (o.seed) cfg.set_seed(*o.seed);
    if (o.poses) cfg.trajectory.count = *o.poses;
    if (o.landmarks) cfg.scene.landmarks = *o.landmarks;
    if (o.trajectory) cfg.trajectory.kind = datapipe::parse_trajectory_kind(*o.trajectory);
    if (o.spacing) cfg.eval.spacing_m = *o.spacing;
    if (o.step) cfg.trajectory.step_m = *o.step;
    cfg.validate();

    const auto scene = datapipe::generate_scene(cfg.seed, cfg.scene.extent_m, cfg.scene.landmarks,
                                                cfg.scene.corridor_half_width_m);
    const auto traj = datapipe::make_trajectory(scene, cfg.trajectory);
    const auto ds = datapipe::make_dataset(scene, traj, cfg.eval.spacing_m, cfg.render);
    datapipe::write_dataset(o.out, ds);
    config::save(fs::path(o.out) / "config.json", cfg);
    out << "wrote " << ds.pairs.size() << " pairs (" << ds.split.queries.size() << " queries, "
        << ds.split.database.size() << " database) to " << o.out << "\n";
    return kOk;
}

// --- train ------------------------------------------------------------------

struct TrainOptions {
    std::string data, out;
    std::optional<std::string> config, profile, metric, aggregator;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, accum, stop_after, ramp;
    std::optional<double> tau, lambda, beta;
    bool resume = false;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
    const fs::path outdir = o.out;
    const fs::path data = o.data;
    auto cfg = o.resume ? base_config(o.config, o.profile, outdir / "config.json")
                        : base_config(o.config, o.profile, data / "config.json");
    if (o.seed) cfg.set_seed(*o.seed);
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.batch_size) cfg.train.batch_size = *o.batch_size;
    if (o.accum) cfg.train.accum_steps = *o.accum;
    if (o.ramp) cfg.train.relation_ramp_epochs = *o.ramp;
    if (o.tau) cfg.model.loss.temperature = *o.tau;
    if (o.lambda) cfg.model.loss.lambda = *o.lambda;
    if (o.beta) cfg.model.loss.beta = *o.beta;
    if (o.metric) cfg.model.loss.metric = losses::parse_relation_metric(*o.metric);
    if (o.aggregator) {
        if (*o.aggregator == "netvlad") cfg.model.aggregation.use_saliency = false;
        else if (*o.aggregator == "saliency") cfg.model.aggregation.use_saliency = true;
        else throw ConfigError("--aggregator must be netvlad or saliency");
    }
    cfg.validate();

    const auto ds = datapipe::read_dataset(data);
    if (ds.pairs.size() < 2) throw DataError("training needs at least 2 pairs");
    const auto inputs = prepare_inputs(ds.pairs, cfg.model);

    fs::create_directories(outdir);
    std::string loss_csv = train::loss_csv_header();
    std::optional<train::Trainer> trainer;
    if (o.resume) {
        trainer.emplace(train::Trainer::resume(io::load_checkpoint(outdir / "state.json"), cfg.model, cfg.train));
        // Keep the rows of the epochs already trained.
        const auto rows = lines_of(io::read_text(outdir / "loss.csv"));
        for (std::size_t i = 1; i < rows.size() && i <= trainer->epoch(); ++i) loss_csv += rows[i] + "\n";
    } else {
        trainer.emplace(cfg.model, cfg.train, model::init_model<float>(cfg.model));
    }

    std::string log = "# started " + utc_now() + "\n";
    const std::size_t stop = std::min(cfg.train.epochs, o.stop_after.value_or(cfg.train.epochs));
    while (trainer->epoch() < stop) {
        const auto e = trainer->run_epoch(inputs);
        loss_csv += train::loss_csv_row(e);
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu/%zu total %.6f infonce %.6f fused %.6f lr_scale %.4f\n", e.epoch,
                      cfg.train.epochs, e.loss.total, e.loss.infonce, e.loss.fused, e.lr_scale);
        log += line;
        out << line;
    }

    io::Checkpoint ck;
    ck.tensors = model::to_named(trainer->params());
    ck.meta = {{"epoch", trainer->epoch()}};
    io::save_checkpoint(outdir / "model.json", ck);
    io::save_checkpoint(outdir / "state.json", trainer->state());
    io::write_text(outdir / "loss.csv", loss_csv);
    io::write_text(outdir / "train.log", log);
    config::save(outdir / "config.json", cfg);
    return kOk;
}

// --- embed ------------------------------------------------------------------

struct EmbedOptions {
    std::string model, modality, out;
    std::optional<std::string> data, split, poses;
    std::vector<std::string> files;
};

int cmd_embed(const EmbedOptions& o, std::ostream& out) {
    const auto modality = aggregation::parse_modality(o.modality);
    const bool image = modality == aggregation::Modality::Image;
    if (o.data.has_value() == !o.files.empty()) throw ConfigError("embed needs exactly one of --data or --files");

    struct Item {
        Id id;
        fs::path path;
    };
    std::vector<Item> items;
    std::vector<evaluation::PoseRecord> all_poses;
    if (o.data) {
        const fs::path dir = *o.data;
        all_poses = datapipe::read_poses_csv(dir / "poses.csv");
        const std::string which = o.split.value_or(image ? "query" : "database");
        std::vector<Id> ids;
        if (which == "all") {
            for (const auto& p : all_poses) ids.push_back(p.id);
        } else {
            const auto sp = read_split(dir / "split.json");
            if (which == "query") ids = sp.queries;
            else if (which == "database") ids = sp.database;
            else throw ConfigError("--split must be query, database or all");
        }
        for (Id id : ids)
            items.push_back({id, dir / (image ? "images" : "clouds") / (std::to_string(id) + (image ? ".ppm" : ".i2pc"))});
    } else {
        if (!o.poses) throw ConfigError("--files needs --poses");
        all_poses = datapipe::read_poses_csv(*o.poses);
        for (const auto& f : o.files) {
            const fs::path p = f;
            const bool ok = image ? has_extension(p, {".ppm", ".pgm", ".png"}) : has_extension(p, {".i2pc", ".xyz"});
            if (!ok) throw DataError(p.string() + " is not a " + o.modality + " file");
            items.push_back({to_id(p.stem().string(), p.string()), p});
        }
    }
    if (items.empty()) throw DataError("nothing to embed");

    const auto bundle = load_model(o.model);
    const auto& mcfg = bundle.cfg.model;
    std::vector<aggregation::GlobalFeature> feats(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        const auto& it = items[i];
        if (image) {
            feats[i] = model::embed_image(bundle.params, model::prepare_image(io::read_image(it.path), mcfg), mcfg, it.id);
        } else {
            feats[i] = model::embed_cloud(bundle.params, model::prepare_cloud(io::read_cloud(it.path), mcfg, it.id),
                                          mcfg, it.id);
        }
    });

    std::map<Id, evaluation::PoseRecord> by_id;
    for (const auto& p : all_poses) by_id[p.id] = p;
    std::vector<evaluation::PoseRecord> poses;
    for (const auto& it : items) {
        auto f = by_id.find(it.id);
        if (f == by_id.end()) throw DataError("no pose for id " + std::to_string(it.id));
        poses.push_back(f->second);
    }
    auto db = evaluation::build_database(feats, poses);
    db.set_modality(modality);
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    db.save(o.out);
    out << "embedded " << db.size() << " " << o.modality << " features into " << o.out << "\n";
    return kOk;
}

// --- query ------------------------------------------------------------------

struct QueryOptions {
    std::string db, queries, out;
    std::size_t topn = 20;
};

int cmd_query(const QueryOptions& o, std::ostream& out) {
    const auto db = evaluation::RetrievalDatabase::load(o.db);
    const auto qs = evaluation::RetrievalDatabase::load(o.queries);
    if (db.modality() != aggregation::Modality::Cloud) throw DataError(o.db + " does not hold cloud features");
    if (qs.modality() != aggregation::Modality::Image) throw DataError(o.queries + " does not hold image features");
    const std::size_t n = std::min(o.topn, db.size());
    std::vector<RetrievalResult> results;
    for (const auto& e : qs.entries()) results.push_back(db.query_topn(e.feature, n, e.id));
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    io::write_text(o.out, rankings_csv(results));
    out << "ranked " << results.size() << " queries against " << db.size() << " entries\n";
    return kOk;
}

// --- eval -------------------------------------------------------------------

struct EvalOptions {
    std::string rankings, poses, out;
    double eta = 20.0;
    std::vector<std::size_t> topn{1, 5, 10, 15, 20};
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
    const auto results = parse_rankings_csv(io::read_text(o.rankings));
    const auto poses = datapipe::read_poses_csv(o.poses);
    const evaluation::PoseTable table(poses);
    const auto report = evaluation::evaluate(results, table, o.eta, o.topn);
    fs::create_directories(o.out);
    io::write_text(fs::path(o.out) / "metrics.csv", evaluation::metrics_csv(report));
    io::write_text(fs::path(o.out) / "pr.csv", evaluation::pr_csv(report.curve));
    for (const auto& [n, v] : report.recall) out << "Recall@" << n << " " << v << "\n";
    out << "max F1 " << report.f1.f1 << " at threshold " << report.f1.threshold << "\n";
    return kOk;
}

// --- plot -------------------------------------------------------------------

struct PlotOptions {
    std::string metrics, pr, out;
};

int cmd_plot(const PlotOptions& o, std::ostream& out) {
    svg::Series recall{"Recall@N", {}};
    const auto mrows = lines_of(io::read_text(o.metrics));
    for (std::size_t i = 1; i < mrows.size(); ++i) {
        const auto f = split(mrows[i], ',');
        if (f.size() != 3) throw DataError("malformed metrics row '" + mrows[i] + "'");
        if (f[0] == "recall") recall.points.emplace_back(to_double(f[1], o.metrics), to_double(f[2], o.metrics));
    }
    if (recall.points.empty()) throw DataError(o.metrics + " has no recall rows");
    svg::Series pr{"PR", {}};
    const auto prow = lines_of(io::read_text(o.pr));
    for (std::size_t i = 1; i < prow.size(); ++i) {
        const auto f = split(prow[i], ',');
        if (f.size() != 3) throw DataError("malformed PR row '" + prow[i] + "'");
        pr.points.emplace_back(to_double(f[2], o.pr), to_double(f[1], o.pr));
    }
    std::sort(pr.points.begin(), pr.points.end());

    double nmax = 1;
    for (const auto& [n, v] : recall.points) nmax = std::max(nmax, n);
    svg::Chart topn{"Top-N recall", "N", "Recall@N", 0, nmax, 0, 1, true, {recall}};
    svg::Chart prc{"Precision-recall", "Recall", "Precision", 0, 1, 0, 1, false, {pr}};
    fs::create_directories(o.out);
    io::write_text(fs::path(o.out) / "topn.svg", svg::render(topn));
    io::write_text(fs::path(o.out) / "pr.svg", svg::render(prc));
    out << "wrote topn.svg and pr.svg to " << o.out << "\n";
    return kOk;
}

}  // namespace

std::string rankings_csv(const std::vector<RetrievalResult>& results) {
    std::string s = "query_id,rank,candidate_id,similarity\n";
    for (const auto& r : results)
        for (std::size_t i = 0; i < r.candidates.size(); ++i)
            s += std::to_string(r.query_id) + "," + std::to_string(i + 1) + "," + std::to_string(r.candidates[i]) + "," +
                 fmt17(r.similarities[i]) + "\n";
    return s;
}

std::vector<RetrievalResult> parse_rankings_csv(const std::string& text) {
    const auto rows = lines_of(text);
    if (rows.empty() || rows.front() != "query_id,rank,candidate_id,similarity")
        throw DataError("rankings file lacks its header");
    std::vector<RetrievalResult> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto f = split(rows[i], ',');
        if (f.size() != 4) throw DataError("malformed rankings row '" + rows[i] + "'");
        const Id q = to_id(f[0], "rankings");
        const Id rank = to_id(f[1], "rankings");
        if (rank == 1) {
            out.push_back({q, {}, {}});
        } else if (out.empty() || out.back().query_id != q || out.back().candidates.size() + 1 != rank) {
            throw DataError("rankings rows for query " + f[0] + " are out of order");
        }
        out.back().candidates.push_back(to_id(f[2], "rankings"));
        out.back().similarities.push_back(to_double(f[3], "rankings"));
    }
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Image-to-point-cloud place recognition toolkit", "i2ploc"};
    app.require_subcommand(1);
    std::optional<int> threads;
    app.add_option("--threads", threads, "Worker threads (overrides I2P_THREADS)")->check(CLI::PositiveNumber);

    GenOptions gen;
    auto* g = app.add_subcommand("gen", "Render a synthetic dataset");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--seed", gen.seed);
    g->add_option("--poses", gen.poses, "Number of trajectory poses")->check(CLI::PositiveNumber);
    g->add_option("--landmarks", gen.landmarks);
    g->add_option("--trajectory", gen.trajectory, "straight or random_walk");
    g->add_option("--spacing", gen.spacing, "Query spacing in meters")->check(CLI::PositiveNumber);
    g->add_option("--step", gen.step, "Pose step in meters")->check(CLI::PositiveNumber);
    g->add_option("--config", gen.config, "JSON config file");
    g->add_option("--profile", gen.profile, "desk or paper");

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "Train both encoders on a dataset");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Run directory")->required();
    t->add_option("--config", tr.config);
    t->add_option("--profile", tr.profile);
    t->add_option("--seed", tr.seed);
    t->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
    t->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
    t->add_option("--accum", tr.accum, "Gradient accumulation steps")->check(CLI::PositiveNumber);
    t->add_option("--relation-ramp", tr.ramp, "Epochs over which the relation weights ramp up");
    t->add_option("--stop-after", tr.stop_after, "Stop after this epoch (resume later)")->check(CLI::PositiveNumber);
    t->add_option("--tau", tr.tau, "InfoNCE temperature (default 0.07)")->check(CLI::PositiveNumber);
    t->add_option("--lambda", tr.lambda, "Euclidean relation weight");
    t->add_option("--beta", tr.beta, "Hyperbolic relation weight");
    t->add_option("--metric", tr.metric, "dot or euclidean_distance");
    t->add_option("--aggregator", tr.aggregator, "netvlad or saliency");
    t->add_flag("--resume", tr.resume, "Continue from the state in --out");

    EmbedOptions em;
    auto* e = app.add_subcommand("embed", "Compute global features");
    e->add_option("--model", em.model, "Run directory")->required();
    e->add_option("--modality", em.modality, "image or cloud")->required();
    e->add_option("--out", em.out, "Feature manifest (.json)")->required();
    e->add_option("--data", em.data, "Dataset directory");
    e->add_option("--split", em.split, "query, database or all");
    e->add_option("--files", em.files, "Explicit image or cloud files named <id>.<ext>");
    e->add_option("--poses", em.poses, "poses.csv for --files");

    QueryOptions qo;
    auto* q = app.add_subcommand("query", "Rank database entries for each query feature");
    q->add_option("--db", qo.db, "Cloud feature manifest")->required();
    q->add_option("--queries", qo.queries, "Image feature manifest")->required();
    q->add_option("--out", qo.out, "Rankings CSV")->required();
    q->add_option("--topn", qo.topn, "Candidates kept per query")->check(CLI::PositiveNumber);

    EvalOptions ev;
    auto* v = app.add_subcommand("eval", "Recall@N and precision-recall from rankings");
    v->add_option("--rankings", ev.rankings)->required();
    v->add_option("--poses", ev.poses)->required();
    v->add_option("--out", ev.out, "Output directory")->required();
    v->add_option("--eta", ev.eta, "Distance threshold in meters")->check(CLI::PositiveNumber);
    v->add_option("--topn", ev.topn, "Comma-separated N values")->delimiter(',')->check(CLI::PositiveNumber);

    PlotOptions pl;
    auto* p = app.add_subcommand("plot", "SVG curves from eval output");
    p->add_option("--metrics", pl.metrics)->required();
    p->add_option("--pr", pl.pr)->required();
    p->add_option("--out", pl.out, "Output directory")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& ex) {
        app.exit(ex, out, err);
        return kOk;
    } catch (const CLI::CallForAllHelp& ex) {
        app.exit(ex, out, err);
        return kOk;
    } catch (const CLI::ParseError& ex) {
        app.exit(ex, out, err);
        return kUsage;
    }

    try {
        const int n = threads ? *threads : threads_from_env();
        if (n > 0) {
            omp_set_num_threads(n);
            kernels::set_thread_cap(n);
        }
        if (g->parsed()) return cmd_gen(gen, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (e->parsed()) return cmd_embed(em, out);
        if (q->parsed()) return cmd_query(qo, out);
        if (v->parsed()) return cmd_eval(ev, out);
        if (p->parsed()) return cmd_plot(pl, out);
        return kUsage;
    } catch (const ConfigError& ex) {
        err << "usage error: " << ex.what() << "\n";
        return kUsage;
    } catch (const NumericError& ex) {
        err << "numeric failure: " << ex.what() << "\n";
        return kNumeric;
    } catch (const DataError& ex) {
        err << "data error: " << ex.what() << "\n";
        return kData;
    } catch (const DimensionError& ex) {
        err << "data error: " << ex.what() << "\n";
        return kData;
    } catch (const nlohmann::json::exception& ex) {
        err << "data error: " << ex.what() << "\n";
        return kData;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kFailure;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace i2p::cli
