// Acceptance run: one PASS/FAIL line per criterion. I2P_ACCEPT=1,6 restricts
// the run to the listed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "i2p/aggregation.hpp"
#include "i2p/cli.hpp"
#include "i2p/config.hpp"
#include "i2p/datapipe.hpp"
#include "i2p/io.hpp"
#include "i2p/losses.hpp"
#include "i2p/manifold.hpp"
#include "i2p/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace i2p;
using testing::Rng;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    auto cfg = testing::toy_model_config();  // D 16, N_3d 8, N_2d 4
    Rng rng(11);
    std::vector<model::SampleInput> data;
    for (model::Id i = 0; i < 2; ++i) data.push_back(testing::random_sample(cfg, i, rng));
    std::vector<const model::SampleInput*> batch{&data[0], &data[1]};

    auto pf = model::init_model<float>(cfg);
    auto p = model::zeros_like(model::init_model<double>(cfg));
    auto theta = model::flatten(p);
    const auto tf = model::flatten(pf);
    // Jitter away from the ReLU kink that zero biases create at init.
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = tf[i] + testing::uniform(rng, -0.05, 0.05);
    model::unflatten<double>(theta, p);

    auto f = [&](std::span<const double> th, std::span<double> grad) {
        auto q = p;
        model::unflatten(th, q);
        if (grad.empty()) return model::batch_loss<double>(q, batch, cfg, nullptr).total;
        auto g = model::zeros_like(q);
        const double l = model::batch_loss<double>(q, batch, cfg, &g).total;
        auto fg = model::flatten(g);
        std::copy(fg.begin(), fg.end(), grad.begin());
        return l;
    };
    // Key biases cancel in the softmax, so some gradients vanish exactly; the
    // floor keeps their finite-difference roundoff from counting as error.
    const auto r = nn::grad_check(f, theta, 1e-5, 1e-4);
    const double secs = seconds_since(t0);
    std::vector<double> g(theta.size());
    f(theta, g);
    const auto small = std::count_if(g.begin(), g.end(), [](double v) { return std::abs(v) < 1e-4; });
    Outcome o;
    o.pass = r.ok && r.checked == theta.size() && r.max_rel_error < 1e-4 && secs < 60.0;
    o.detail = fmt("%zu coordinates (%td below the 1e-4 floor), max rel error %.3g (< 1e-4), %.1f s (< 60 s)",
                   r.checked, small, r.max_rel_error, secs);
    if (!r.ok) o.detail += "; " + r.message;
    if (r.max_rel_error >= 1e-4)
        o.detail += fmt("; worst coordinate %zu: analytic %.9g, numeric %.9g", r.worst_index, r.analytic, r.numeric);
    return o;
}

// 2 -------------------------------------------------------------------------

Outcome hyperbolic_suite() {
    using namespace manifold;
    Rng rng(22);
    double id_err = 0, sym_err = 0, mob_err = 0, limit_err = 0;
    auto random_point = [&](std::size_t dim, double c, double radius) {
        std::vector<double> x(dim);
        for (auto& v : x) v = testing::uniform(rng, -radius, radius) / std::sqrt(c * double(dim));
        return PoincarePoint(x, c);
    };
    for (int t = 0; t < 500; ++t) {
        const double c = t % 2 ? 1.0 : 0.3;
        auto x = random_point(8, c, 0.95), y = random_point(8, c, 0.95);
        id_err = std::max(id_err, std::abs(hyp_dist(x, x)));
        sym_err = std::max(sym_err, std::abs(hyp_dist(x, y) - hyp_dist(y, x)));
        const PoincarePoint zero(std::vector<double>(8, 0.0), c);
        const auto a = mobius_add(x, zero), b = mobius_add(zero, x);
        for (std::size_t j = 0; j < 8; ++j)
            mob_err = std::max({mob_err, std::abs(a.q[j] - x.q[j]), std::abs(b.q[j] - x.q[j])});
    }
    const double c_small = 1e-6;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x(4), y(4), d(4);
        for (auto& v : x) v = testing::uniform(rng, -0.5, 0.5);
        for (auto& v : y) v = testing::uniform(rng, -0.5, 0.5);
        for (int j = 0; j < 4; ++j) d[j] = x[j] - y[j];
        const double euc = 2.0 * std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
        const double h = hyp_dist(PoincarePoint(x, c_small), PoincarePoint(y, c_small));
        limit_err = std::max(limit_err, std::abs(h / euc - 1.0));
    }
    const std::vector<double> v{1.0, 0.0};
    const double exp0 = exp_map0(v, 1.0).q[0];
    const double exp_err = std::abs(exp0 - 0.761594);

    Outcome o;
    o.pass = id_err <= 1e-9 && sym_err <= 1e-9 && mob_err <= 1e-12 && limit_err <= 1e-3 && exp_err <= 1e-6;
    o.detail = fmt("d(x,x) %.2g, |d(x,y)-d(y,x)| %.2g (<= 1e-9); mobius %.2g (<= 1e-12); "
                   "c=1e-6 rel %.2g (<= 1e-3); exp_0 %.7f (tanh 1, err %.2g <= 1e-6)",
                   id_err, sym_err, mob_err, limit_err, exp0, exp_err);
    return o;
}

// 3 -------------------------------------------------------------------------

Outcome oracle_suite() {
    using namespace aggregation;
    Rng rng(33);
    double vlad_err = 0, svlad_err = 0, nce_err = 0;
    bool unit_exact = true;
    for (int t = 0; t < 200; ++t) {
        const std::size_t N = 1 + t % 5, K = 1 + (t / 5) % 4, D = 2 + t % 3;
        auto p = init_vlad<float>(D, K, 8, rng);
        p.assign_w = testing::random_tensor<float>({K, D}, rng);
        p.assign_b = testing::random_tensor<float>({K}, rng);
        auto F = testing::random_tensor<float>({N, D}, rng);
        std::vector<float> ones(N, 1.0f), s(N);
        for (auto& v : s) v = static_cast<float>(testing::uniform(rng, 0, 2));
        const auto V = netvlad(F, p), Vs = saliency_netvlad(F, s, p);
        const auto ref = oracle::vlad(F, ones, p), ref_s = oracle::vlad(F, s, p);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            vlad_err = std::max(vlad_err, std::abs(V.vec()[i] - ref[i]));
            svlad_err = std::max(svlad_err, std::abs(Vs.vec()[i] - ref_s[i]));
        }
        unit_exact = unit_exact && saliency_netvlad(F, ones, p).vec() == V.vec();
    }
    for (int t = 0; t < 60; ++t) {
        const std::size_t B = 2 + t % 7;
        losses::BatchFeatures bf{testing::random_unit_rows<double>(B, 16, rng),
                                 testing::random_unit_rows<double>(B, 16, rng)};
        const double tau = t % 3 == 0 ? 0.07 : (t % 3 == 1 ? 0.5 : 1.0);
        nce_err = std::max(nce_err, std::abs(losses::infonce(bf, tau) - oracle::infonce(bf, tau)));
    }
    losses::BatchFeatures one{testing::random_unit_rows<double>(1, 16, rng), testing::random_unit_rows<double>(1, 16, rng)};
    const double b1 = losses::infonce(one, 0.07);

    Outcome o;
    o.pass = vlad_err <= 1e-6 && svlad_err <= 1e-6 && unit_exact && nce_err <= 1e-6 && b1 == 0.0;
    o.detail = fmt("NetVLAD %.2g, saliency NetVLAD %.2g (<= 1e-6); saliency=1 exact: %s; InfoNCE %.2g (<= 1e-6); B=1 "
                   "InfoNCE = %g",
                   vlad_err, svlad_err, unit_exact ? "yes" : "no", nce_err, b1);
    return o;
}

// 4 -------------------------------------------------------------------------

Outcome pointops_suite() {
    Rng rng(44);
    std::size_t fps_bad = 0, knn_bad = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 4 + rng() % 61;  // 4..64 points
        auto pc = testing::random_cloud(n, rng, 10.0);
        const std::size_t m = 1 + rng() % n;
        const auto idx = pointops::fps(pc, m, 1000 + t);
        if (idx != oracle::fps(pc, m, idx[0])) ++fps_bad;
        const std::size_t k = 1 + rng() % n;
        std::vector<float> centers;
        for (std::size_t i : idx) {
            const auto c = pc.point(i);
            centers.insert(centers.end(), c.begin(), c.end());
        }
        const auto nn = pointops::knn(pc, centers, k);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto want = oracle::knn(pc, pc.point(idx[r]), k);
            for (std::size_t j = 0; j < k; ++j)
                if (nn.at(r, j) != want[j]) {
                    ++knn_bad;
                    break;
                }
        }
    }
    Outcome o;
    o.pass = fps_bad == 0 && knn_bad == 0;
    o.detail = fmt("200 trials on <= 64 points: FPS mismatches %zu, KNN row mismatches %zu", fps_bad, knn_bad);
    return o;
}

// 5 -------------------------------------------------------------------------

Outcome metric_suite() {
    std::size_t recall_bad = 0, f1_bad = 0, monotone_bad = 0;
    for (int t = 0; t < 20; ++t) {
        Rng rng(5000 + t);
        auto set = testing::random_retrieval_set(8 + t, 20 + t, rng);
        const evaluation::PoseTable table(set.poses);
        const double eta = 5.0 + t;
        double prev = 0;
        for (std::size_t n = 1; n <= 20 + std::size_t(t); ++n) {
            const double r = evaluation::recall_at_n(set.results, table, eta, n);
            if (r != oracle::recall(set.results, set.poses, eta, n)) ++recall_bad;
            if (r < prev) ++monotone_bad;
            prev = r;
        }
        const auto curve = evaluation::pr_curve(set.results, table, eta);
        const auto want = oracle::sweep(set.results, set.poses, eta);
        bool same = curve.size() == want.size();
        for (std::size_t i = 0; same && i < curve.size(); ++i)
            same = curve[i].threshold == want[i].threshold && curve[i].tp == want[i].tp && curve[i].fp == want[i].fp &&
                   curve[i].fn == want[i].fn && curve[i].tn == want[i].tn;
        if (!same || evaluation::max_f1(set.results, table, eta).f1 != oracle::max_f1(set.results, set.poses, eta))
            ++f1_bad;
    }
    Outcome o;
    o.pass = recall_bad == 0 && f1_bad == 0 && monotone_bad == 0;
    o.detail = fmt("20 sets: Recall@N mismatches %zu, sweep/max-F1 mismatches %zu, monotonicity violations %zu",
                   recall_bad, f1_bad, monotone_bad);
    return o;
}

// Retrieval experiments -------------------------------------------------------

// Toy setup: 32x128 panoramas, two blocks of width 32, 32 cloud tokens,
// 8 clusters, 32-d global features, random walk with 4 m steps.
config::RunConfig toy_run(std::uint64_t seed, std::size_t poses) {
    auto c = config::desk_profile();
    auto& e = c.model.encoder;
    e.image_height = c.render.image_height = 32;
    e.image_width = c.render.image_width = 128;
    e.patch_size = 16;
    e.blocks = 2;
    e.image_heads = 4;
    e.cloud_heads = 2;
    e.image_dim = e.cloud_dim = 32;
    e.cloud_tokens = 32;
    e.neighbors = 16;
    e.mlp_ratio = 2;
    e.tokenizer_channels = {32, 64};
    c.model.aggregation.clusters = 8;
    c.model.aggregation.output_dim = 32;
    c.render.cloud_points = 1024;
    c.render.fov_up_deg = 20;
    c.render.fov_down_deg = 10;
    c.scene.landmarks = 500;
    c.trajectory.kind = datapipe::TrajectoryKind::RandomWalk;
    c.trajectory.step_m = 4;
    c.trajectory.count = poses;
    c.train.epochs = 200;
    c.train.batch_size = 16;
    c.train.relation_ramp_epochs = 50;
    auto& o = c.train.optimizer;
    o.lr_image = o.lr_cloud = o.lr_aggregator = 5e-4;
    c.set_seed(seed);
    return c;
}

struct Prepared {
    datapipe::Dataset ds;
    std::vector<model::SampleInput> inputs;
};

Prepared prepare(const config::RunConfig& c) {
    Prepared p;
    const auto scene =
        datapipe::generate_scene(c.seed, c.scene.extent_m, c.scene.landmarks, c.scene.corridor_half_width_m);
    p.ds = datapipe::make_dataset(scene, datapipe::make_trajectory(scene, c.trajectory), c.eval.spacing_m, c.render);
    for (const auto& pair : p.ds.pairs)
        p.inputs.push_back({pair.pose.id, model::prepare_image(pair.image, c.model),
                            model::prepare_cloud(pair.cloud, c.model, pair.pose.id)});
    return p;
}

model::ModelParams<float> train_model(const config::RunConfig& c, std::span<const model::SampleInput> data) {
    train::Trainer tr(c.model, c.train, model::init_model<float>(c.model));
    while (tr.epoch() < c.train.epochs) tr.run_epoch(data);
    return tr.params();
}

// Recall@1 of image queries against a cloud database.
double recall_at_1(const model::ModelParams<float>& params, const config::RunConfig& c, const Prepared& p,
                   const std::vector<model::Id>& query_ids, const std::vector<model::Id>& db_ids, double eta) {
    std::vector<aggregation::GlobalFeature> feats;
    std::vector<evaluation::PoseRecord> poses;
    for (auto id : db_ids) {
        feats.push_back(model::embed_cloud(params, p.inputs[id].cloud, c.model, id));
        poses.push_back(p.ds.pairs[id].pose);
    }
    const auto db = evaluation::build_database(feats, poses);
    std::vector<evaluation::RetrievalResult> results;
    for (auto id : query_ids)
        results.push_back(db.query_topn(model::embed_image(params, p.inputs[id].patches, c.model, id).values, 1, id));
    std::vector<evaluation::PoseRecord> all;
    for (const auto& pair : p.ds.pairs) all.push_back(pair.pose);
    return evaluation::recall_at_n(results, evaluation::PoseTable(all), eta, 1);
}

// 6 -------------------------------------------------------------------------

Outcome overfit_suite() {
    const auto t0 = Clock::now();
    const auto c = toy_run(1, 64);
    const auto p = prepare(c);
    const auto params = train_model(c, p.inputs);
    std::vector<model::Id> ids;
    for (const auto& pair : p.ds.pairs) ids.push_back(pair.pose.id);
    // Poses are 4 m apart, so 0.5 m only accepts the pair's own cloud.
    const double r1 = recall_at_1(params, c, p, ids, ids, 0.5);
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = r1 >= 0.95 && secs < 300;
    o.detail = fmt("64 pairs, %zu epochs, own-pair Recall@1 %.4f (>= 0.95), %.0f s (< 300 s)", c.train.epochs, r1, secs);
    return o;
}

// 7 -------------------------------------------------------------------------

Outcome ablation_suite() {
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    const char* names[3] = {"netvlad", "saliency", "saliency+fused"};
    std::vector<std::vector<double>> r1(3);
    std::ostringstream per_seed;
    for (auto seed : seeds) {
        auto base = toy_run(seed, 256);
        base.eval.spacing_m = 12;  // every third pose is a query
        base.train.epochs = 60;
        base.train.relation_ramp_epochs = 15;
        const auto p = prepare(base);
        std::vector<model::SampleInput> db_inputs;
        for (auto id : p.ds.split.database) db_inputs.push_back(p.inputs[id]);
        per_seed << " seed " << seed << ":";
        for (int v = 0; v < 3; ++v) {
            auto c = base;
            c.model.aggregation.use_saliency = v > 0;
            if (v < 2) c.model.loss.lambda = c.model.loss.beta = 0;
            const auto params = train_model(c, db_inputs);
            const double r = recall_at_1(params, c, p, p.ds.split.queries, p.ds.split.database, c.eval.eta_m);
            r1[v].push_back(r);
            per_seed << " " << names[v] << " " << fmt("%.3f", r);
        }
        if (r1[1].back() < r1[0].back()) per_seed << " (saliency below netvlad)";
        if (r1[2].back() < r1[1].back() - 0.01) per_seed << " (fused below saliency)";
        per_seed << ";";
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
    const double m0 = mean(r1[0]), m1 = mean(r1[1]), m2 = mean(r1[2]);
    Outcome o;
    o.pass = m1 >= m0 && m2 >= m1 - 0.01;
    o.detail = fmt("mean Recall@1 netvlad %.4f, saliency %.4f (>= netvlad), saliency+fused %.4f (>= saliency - 0.01);",
                   m0, m1, m2) +
               per_seed.str();
    return o;
}

// 8 -------------------------------------------------------------------------

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) std::cerr << "command failed (" << code << "): " << err.str();
    return code;
}

Outcome determinism_suite() {
    const auto root = testing::temp_dir("acceptance_determinism");
    auto c = toy_run(7, 32);
    c.train.epochs = 4;
    c.train.relation_ramp_epochs = 2;
    c.eval.spacing_m = 12;
    config::save(root / "config.json", c);
    std::vector<std::string> metrics, pr;
    bool ok = true;
    for (const char* name : {"a", "b"}) {
        const auto d = root / name;
        const auto s = [&](const char* sub) { return (d / sub).string(); };
        ok = ok && cli({"gen", "--config", (root / "config.json").string(), "--out", s("ds")}) == 0;
        ok = ok && cli({"train", "--data", s("ds"), "--out", s("run")}) == 0;
        ok = ok && cli({"embed", "--model", s("run"), "--modality", "cloud", "--data", s("ds"), "--out", s("db.json")}) == 0;
        ok = ok && cli({"embed", "--model", s("run"), "--modality", "image", "--data", s("ds"), "--out", s("q.json")}) == 0;
        ok = ok && cli({"query", "--db", s("db.json"), "--queries", s("q.json"), "--out", s("rank.csv")}) == 0;
        ok = ok && cli({"eval", "--rankings", s("rank.csv"), "--poses", (d / "ds" / "poses.csv").string(), "--out",
                        s("eval")}) == 0;
        if (!ok) break;
        metrics.push_back(io::read_text(d / "eval" / "metrics.csv"));
        pr.push_back(io::read_text(d / "eval" / "pr.csv"));
    }
    Outcome o;
    o.pass = ok && metrics[0] == metrics[1] && pr[0] == pr[1];
    o.detail = ok ? fmt("metrics.csv identical: %s, pr.csv identical: %s", metrics[0] == metrics[1] ? "yes" : "no",
                        pr[0] == pr[1] ? "yes" : "no")
                  : std::string("pipeline command failed");
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient suite", gradient_suite},
        {2, "hyperbolic suite", hyperbolic_suite},
        {3, "aggregation and InfoNCE oracles", oracle_suite},
        {4, "point-op oracles", pointops_suite},
        {5, "metric oracles", metric_suite},
        {6, "end-to-end overfit", overfit_suite},
        {7, "ablation direction", ablation_suite},
        {8, "determinism", determinism_suite},
    };
    std::vector<int> only;
    if (const char* sel = std::getenv("I2P_ACCEPT")) {
        std::stringstream ss(sel);
        std::string tok;
        while (std::getline(ss, tok, ',')) only.push_back(std::stoi(tok));
    }
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
