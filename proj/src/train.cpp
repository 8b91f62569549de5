#include "i2p/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <cstdlib>
#include <random>

#include "i2p/errors.hpp"

namespace i2p::train {

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw ConfigError("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

Group group_of(const std::string& name) {
    if (name.rfind("image.", 0) == 0) return Group::Image;
    if (name.rfind("cloud.", 0) == 0) return Group::Cloud;
    if (name.rfind("agg.", 0) == 0) return Group::Aggregator;
    throw ConfigError("parameter '" + name + "' belongs to no optimizer group");
}

double OptimizerConfig::lr(Group g) const {
    switch (g) {
        case Group::Image: return lr_image;
        case Group::Cloud: return lr_cloud;
        case Group::Aggregator: return lr_aggregator;
    }
    return 0.0;
}

void OptimizerConfig::validate() const {
    if (!(lr_image > 0) || !(lr_cloud > 0) || !(lr_aggregator > 0)) throw ConfigError("learning rates must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
    if (!(warmup_epochs >= 0)) throw ConfigError("warm-up epochs must be non-negative");
    if (!(momentum >= 0 && momentum < 1) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0))
        throw ConfigError("invalid optimizer moment settings");
}

void TrainConfig::validate() const {
    optimizer.validate();
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (accum_steps < 1) throw ConfigError("accumulation steps must be positive");
}

std::size_t TrainConfig::batches_per_epoch(std::size_t samples) const {
    std::size_t n = (samples + batch_size - 1) / batch_size;
    // A trailing single sample joins the previous batch; InfoNCE needs two.
    if (n > 1 && samples % batch_size == 1) --n;
    return n;
}

std::size_t TrainConfig::steps_per_epoch(std::size_t samples) const {
    return (batches_per_epoch(samples) + accum_steps - 1) / accum_steps;
}

double lr_scale(std::size_t step, std::size_t warmup_steps, std::size_t total_steps) {
    if (step < warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return 1.0;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double relation_scale(std::size_t epoch, std::size_t ramp_epochs) {
    if (ramp_epochs == 0 || epoch > ramp_epochs) return 1.0;
    return static_cast<double>(epoch - 1) / static_cast<double>(ramp_epochs);
}

std::vector<std::size_t> epoch_order(std::size_t samples, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + epoch);
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = samples; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

Trainer::Trainer(model::ModelConfig mcfg, TrainConfig tcfg, model::ModelParams<float> params)
    : mcfg_(std::move(mcfg)), tcfg_(std::move(tcfg)), params_(std::move(params)) {
    mcfg_.validate();
    tcfg_.validate();
    grads_ = model::zeros_like(params_);
    m_ = model::zeros_like(params_);
    v_ = model::zeros_like(params_);
}

bool Trainer::frozen(const std::string& name) const {
    auto block_index = [&](const std::string& prefix) -> long {
        if (name.rfind(prefix, 0) != 0) return -1;
        return std::strtol(name.c_str() + prefix.size(), nullptr, 10);
    };
    const long ib = block_index("image.block");
    if (ib >= 0 && static_cast<std::size_t>(ib) < mcfg_.encoder.frozen_image_blocks) return true;
    const long cb = block_index("cloud.block");
    return cb >= 0 && static_cast<std::size_t>(cb) < mcfg_.encoder.frozen_cloud_blocks;
}

void Trainer::apply_step(std::size_t total_steps, std::size_t warmup_steps, double grad_scale) {
    const auto& o = tcfg_.optimizer;
    last_scale_ = lr_scale(step_, warmup_steps, total_steps);
    ++step_;
    std::vector<Tensor<float>*> ps, gs, ms, vs;
    std::vector<std::string> names;
    params_.visit([&](const std::string& n, Tensor<float>& t) {
        names.push_back(n);
        ps.push_back(&t);
    });
    grads_.visit([&](const std::string&, Tensor<float>& t) { gs.push_back(&t); });
    m_.visit([&](const std::string&, Tensor<float>& t) { ms.push_back(&t); });
    v_.visit([&](const std::string&, Tensor<float>& t) { vs.push_back(&t); });
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto& p = ps[k]->vec();
        auto& g = gs[k]->vec();
        if (frozen(names[k])) {
            std::fill(g.begin(), g.end(), 0.0f);
            continue;
        }
        const double lr = o.lr(group_of(names[k])) * last_scale_;
        auto& m = ms[k]->vec();
        auto& v = vs[k]->vec();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]) * grad_scale;
            double pi = p[i];
            if (o.kind == OptimizerKind::AdamW) {
                const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
                const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
                m[i] = static_cast<float>(mi);
                v[i] = static_cast<float>(vi);
                pi -= lr * o.weight_decay * pi;
                pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + o.eps);
            } else {
                const double di = gi + o.weight_decay * pi;
                const double mi = o.momentum * m[i] + di;
                m[i] = static_cast<float>(mi);
                pi -= lr * mi;
            }
            p[i] = static_cast<float>(pi);
            g[i] = 0.0f;
        }
    }
}

EpochLog Trainer::run_epoch(std::span<const model::SampleInput> data) {
    if (data.size() < 2) throw DataError("training needs at least 2 pairs");
    const std::size_t S = data.size();
    const std::size_t nb = tcfg_.batches_per_epoch(S);
    const std::size_t spe = tcfg_.steps_per_epoch(S);
    const std::size_t total_steps = spe * tcfg_.epochs;
    const auto warmup_steps = static_cast<std::size_t>(std::llround(tcfg_.optimizer.warmup_epochs * static_cast<double>(spe)));

    ++epoch_;
    const auto order = epoch_order(S, tcfg_.seed, epoch_);
    EpochLog log;
    log.epoch = epoch_;
    auto cfg = mcfg_;
    const double rs = relation_scale(epoch_, tcfg_.relation_ramp_epochs);
    cfg.loss.lambda *= rs;
    cfg.loss.beta *= rs;
    std::size_t pending = 0;
    for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t begin = b * tcfg_.batch_size;
        const std::size_t end = b + 1 == nb ? S : begin + tcfg_.batch_size;
        std::vector<const model::SampleInput*> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&data[order[i]]);
        const auto l = model::batch_loss<float>(params_, batch, cfg, &grads_);
        const double w = static_cast<double>(batch.size()) / static_cast<double>(S);
        log.loss.total += w * l.total;
        log.loss.infonce += w * l.infonce;
        log.loss.relation_euc += w * l.relation_euc;
        log.loss.relation_hyp += w * l.relation_hyp;
        log.loss.fused += w * l.fused;
        if (++pending == tcfg_.accum_steps || b + 1 == nb) {
            apply_step(total_steps, warmup_steps, 1.0 / static_cast<double>(pending));
            pending = 0;
        }
    }
    log.lr_scale = last_scale_;
    return log;
}

io::Checkpoint Trainer::state() const {
    io::Checkpoint ck;
    auto add = [&](const model::ModelParams<float>& p, const std::string& prefix) {
        auto copy = p;
        for (auto& nt : model::to_named(copy, prefix)) ck.tensors.push_back(std::move(nt));
    };
    add(params_, "param/");
    add(m_, "m/");
    if (tcfg_.optimizer.kind == OptimizerKind::AdamW) add(v_, "v/");
    ck.meta = {{"epoch", epoch_}, {"step", step_}, {"optimizer", to_string(tcfg_.optimizer.kind)},
               {"last_lr_scale", last_scale_}};
    return ck;
}

Trainer Trainer::resume(const io::Checkpoint& ck, model::ModelConfig mcfg, TrainConfig tcfg) {
    if (ck.meta.value("optimizer", "") != to_string(tcfg.optimizer.kind))
        throw ConfigError("training state was written by a different optimizer");
    Trainer t(mcfg, tcfg, model::from_named(ck, mcfg, "param/"));
    t.m_ = model::from_named(ck, mcfg, "m/");
    if (tcfg.optimizer.kind == OptimizerKind::AdamW) t.v_ = model::from_named(ck, mcfg, "v/");
    t.epoch_ = ck.meta.at("epoch").get<std::size_t>();
    t.step_ = ck.meta.at("step").get<std::size_t>();
    t.last_scale_ = ck.meta.value("last_lr_scale", 0.0);
    if (t.epoch_ >= tcfg.epochs) throw ConfigError("training state is already at the final epoch");
    return t;
}

std::string loss_csv_header() { return "epoch,total,infonce,relation_euc,relation_hyp,fused,lr_scale\n"; }

std::string loss_csv_row(const EpochLog& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.loss.total, e.loss.infonce,
                  e.loss.relation_euc, e.loss.relation_hyp, e.loss.fused, e.lr_scale);
    return buf;
}

}  // namespace i2p::train
