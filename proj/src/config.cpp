#include "i2p/config.hpp"

#include <fstream>
#include <set>

#include "i2p/errors.hpp"
#include "i2p/io.hpp"

namespace i2p::config {

using nlohmann::json;

void RunConfig::set_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    model.ransac.seed = s;
    train.seed = s;
    trajectory.seed = s;
    render.seed = s;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (model.encoder.image_height != render.image_height || model.encoder.image_width != render.image_width)
        throw ConfigError("encoder image size differs from the render size");
    if (model.encoder.image_channels != 3) throw ConfigError("rendered images have 3 channels");
    if (scene.extent_m < 40.0) throw ConfigError("scene extent must be at least 40 m");
    if (!(eval.eta_m > 0)) throw ConfigError("eta must be positive");
    if (!(eval.spacing_m > 0)) throw ConfigError("query spacing must be positive");
    if (eval.topn.empty()) throw ConfigError("topn list is empty");
    for (auto n : eval.topn)
        if (n == 0) throw ConfigError("topn entries must be positive");
    if (trajectory.count == 0) throw ConfigError("pose count must be positive");
    if (!(trajectory.step_m > 0)) throw ConfigError("trajectory step must be positive");
}

RunConfig desk_profile() {
    RunConfig c;
    c.profile = "desk";
    auto& e = c.model.encoder;
    e.image_height = 64;
    e.image_width = 256;
    e.image_channels = 3;
    e.patch_size = 16;
    e.blocks = 2;
    e.image_heads = 4;
    e.cloud_heads = 2;
    e.image_dim = 64;
    e.cloud_dim = 64;
    e.cloud_tokens = 128;
    e.neighbors = 16;
    e.mlp_ratio = 2;
    e.tokenizer_channels = {64, 128};
    c.model.aggregation.clusters = 16;
    c.model.aggregation.output_dim = 128;
    auto& o = c.train.optimizer;
    o.kind = train::OptimizerKind::AdamW;
    o.lr_image = 1e-3;
    o.lr_cloud = 1e-3;
    o.lr_aggregator = 2e-3;
    o.weight_decay = 1e-3;
    o.warmup_epochs = 3;
    c.train.epochs = 40;
    c.train.batch_size = 16;
    c.train.accum_steps = 1;
    c.scene.extent_m = 240.0;
    c.scene.landmarks = 160;
    c.trajectory.count = 128;
    c.trajectory.start = {-100.0, 0.0};
    c.set_seed(0);
    return c;
}

RunConfig paper_profile() {
    RunConfig c;
    c.profile = "paper";
    c.model.encoder = encoders::EncoderConfig{};  // 512x1024, 12 blocks, D=384, N_3d=3072, k=32
    c.model.aggregation = aggregation::AggregationConfig{};
    c.model.loss = losses::LossConfig{};
    auto& o = c.train.optimizer;
    o.kind = train::OptimizerKind::Sgd;
    o.lr_image = 1e-4;
    o.lr_cloud = 1e-5;
    o.lr_aggregator = 5e-4;
    o.weight_decay = 1e-3;
    o.warmup_epochs = 3;
    o.momentum = 0.9;
    c.train.epochs = 100;
    c.train.batch_size = 4;
    c.train.accum_steps = 64;
    c.render.image_height = 512;
    c.render.image_width = 1024;
    c.render.cloud_points = 16384;
    c.scene.extent_m = 400.0;
    c.scene.landmarks = 600;
    c.trajectory.count = 1000;
    c.trajectory.kind = datapipe::TrajectoryKind::RandomWalk;
    c.set_seed(0);
    return c;
}

RunConfig profile(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

json to_json(const RunConfig& c) {
    const auto& e = c.model.encoder;
    const auto& a = c.model.aggregation;
    const auto& l = c.model.loss;
    const auto& r = c.model.ransac;
    const auto& o = c.train.optimizer;
    const auto& t = c.trajectory;
    const auto& rd = c.render;
    json j;
    j["profile"] = c.profile;
    j["seed"] = c.seed;
    j["encoder"] = {{"image_height", e.image_height},
                    {"image_width", e.image_width},
                    {"image_channels", e.image_channels},
                    {"patch_size", e.patch_size},
                    {"blocks", e.blocks},
                    {"image_heads", e.image_heads},
                    {"cloud_heads", e.cloud_heads},
                    {"image_dim", e.image_dim},
                    {"cloud_dim", e.cloud_dim},
                    {"cloud_tokens", e.cloud_tokens},
                    {"neighbors", e.neighbors},
                    {"mlp_ratio", e.mlp_ratio},
                    {"tokenizer_channels", e.tokenizer_channels},
                    {"use_class_token_image", e.use_class_token_image},
                    {"use_class_token_cloud", e.use_class_token_cloud},
                    {"image_saliency", encoders::to_string(e.image_saliency)},
                    {"cloud_saliency", encoders::to_string(e.cloud_saliency)},
                    {"cloud_scale_m", e.cloud_scale_m},
                    {"frozen_image_blocks", e.frozen_image_blocks},
                    {"frozen_cloud_blocks", e.frozen_cloud_blocks}};
    j["aggregation"] = {{"clusters", a.clusters},
                        {"output_dim", a.output_dim},
                        {"intra_normalize", a.intra_normalize},
                        {"use_saliency", a.use_saliency}};
    j["loss"] = {{"temperature", l.temperature},
                 {"lambda", l.lambda},
                 {"beta", l.beta},
                 {"curvature", l.curvature},
                 {"metric", losses::to_string(l.metric)},
                 {"symmetric_infonce", l.symmetric_infonce}};
    j["ground_removal"] = {{"enabled", c.model.ground_removal},
                           {"iterations", r.iterations},
                           {"inlier_threshold_m", r.inlier_threshold_m},
                           {"min_inlier_fraction", r.min_inlier_fraction}};
    j["optimizer"] = {{"kind", train::to_string(o.kind)},
                      {"lr_image", o.lr_image},
                      {"lr_cloud", o.lr_cloud},
                      {"lr_aggregator", o.lr_aggregator},
                      {"weight_decay", o.weight_decay},
                      {"warmup_epochs", o.warmup_epochs},
                      {"momentum", o.momentum},
                      {"beta1", o.beta1},
                      {"beta2", o.beta2},
                      {"eps", o.eps}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"accum_steps", c.train.accum_steps},
                  {"relation_ramp_epochs", c.train.relation_ramp_epochs}};
    j["scene"] = {{"extent_m", c.scene.extent_m},
                  {"landmarks", c.scene.landmarks},
                  {"corridor_half_width_m", c.scene.corridor_half_width_m}};
    j["trajectory"] = {{"kind", datapipe::to_string(t.kind)},
                       {"count", t.count},
                       {"step_m", t.step_m},
                       {"start", t.start},
                       {"heading_rad", t.heading_rad},
                       {"turn_sigma_rad", t.turn_sigma_rad}};
    j["render"] = {{"image_height", rd.image_height},
                   {"image_width", rd.image_width},
                   {"fov_up_deg", rd.fov_up_deg},
                   {"fov_down_deg", rd.fov_down_deg},
                   {"sensor_height_m", rd.sensor_height_m},
                   {"max_range_m", rd.max_range_m},
                   {"height_scale_m", rd.height_scale_m},
                   {"render_ground", rd.render_ground},
                   {"cloud_points", rd.cloud_points},
                   {"submap_m", rd.submap_m},
                   {"noise_sigma_m", rd.noise_sigma_m}};
    j["eval"] = {{"eta_m", c.eval.eta_m}, {"topn", c.eval.topn}, {"spacing_m", c.eval.spacing_m}};
    return j;
}

namespace {

// Reads the keys of one JSON object into fields, rejecting keys it never saw.
class Section {
public:
    Section(const json& parent, const std::string& name) : name_(name) {
        auto it = parent.find(name);
        if (it == parent.end()) return;
        if (!it->is_object()) throw ConfigError("config section '" + name + "' must be an object");
        obj_ = &*it;
    }

    template <typename T>
    Section& get(const char* key, T& out) {
        known_.insert(key);
        if (!obj_) return *this;
        auto it = obj_->find(key);
        if (it == obj_->end()) return *this;
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key " + name_ + "." + key + " has the wrong type");
        }
        return *this;
    }

    template <typename T, typename Parse>
    Section& get_enum(const char* key, T& out, Parse parse) {
        std::string s;
        get(key, s);
        if (!s.empty()) out = parse(s);
        return *this;
    }

    void finish() const {
        if (!obj_) return;
        for (const auto& [k, v] : obj_->items())
            if (!known_.count(k)) throw ConfigError("unknown config key " + name_ + "." + k);
    }

private:
    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> known_;
};

}  // namespace

RunConfig from_json(const json& j, RunConfig c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> sections{"profile", "seed", "encoder", "aggregation", "loss", "ground_removal",
                                                "optimizer", "train", "scene", "trajectory", "render", "eval"};
    for (const auto& [k, v] : j.items())
        if (!sections.count(k)) throw ConfigError("unknown config section '" + k + "'");
    if (j.contains("profile")) c.profile = j.at("profile").get<std::string>();
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
        c.set_seed(j.at("seed").get<std::uint64_t>());
    }

    auto& e = c.model.encoder;
    Section(j, "encoder")
        .get("image_height", e.image_height)
        .get("image_width", e.image_width)
        .get("image_channels", e.image_channels)
        .get("patch_size", e.patch_size)
        .get("blocks", e.blocks)
        .get("image_heads", e.image_heads)
        .get("cloud_heads", e.cloud_heads)
        .get("image_dim", e.image_dim)
        .get("cloud_dim", e.cloud_dim)
        .get("cloud_tokens", e.cloud_tokens)
        .get("neighbors", e.neighbors)
        .get("mlp_ratio", e.mlp_ratio)
        .get("tokenizer_channels", e.tokenizer_channels)
        .get("use_class_token_image", e.use_class_token_image)
        .get("use_class_token_cloud", e.use_class_token_cloud)
        .get_enum("image_saliency", e.image_saliency, encoders::parse_saliency_mode)
        .get_enum("cloud_saliency", e.cloud_saliency, encoders::parse_saliency_mode)
        .get("cloud_scale_m", e.cloud_scale_m)
        .get("frozen_image_blocks", e.frozen_image_blocks)
        .get("frozen_cloud_blocks", e.frozen_cloud_blocks)
        .finish();

    auto& a = c.model.aggregation;
    Section(j, "aggregation")
        .get("clusters", a.clusters)
        .get("output_dim", a.output_dim)
        .get("intra_normalize", a.intra_normalize)
        .get("use_saliency", a.use_saliency)
        .finish();

    auto& l = c.model.loss;
    Section(j, "loss")
        .get("temperature", l.temperature)
        .get("lambda", l.lambda)
        .get("beta", l.beta)
        .get("curvature", l.curvature)
        .get_enum("metric", l.metric, losses::parse_relation_metric)
        .get("symmetric_infonce", l.symmetric_infonce)
        .finish();

    auto& r = c.model.ransac;
    Section(j, "ground_removal")
        .get("enabled", c.model.ground_removal)
        .get("iterations", r.iterations)
        .get("inlier_threshold_m", r.inlier_threshold_m)
        .get("min_inlier_fraction", r.min_inlier_fraction)
        .finish();

    auto& o = c.train.optimizer;
    Section(j, "optimizer")
        .get_enum("kind", o.kind, train::parse_optimizer)
        .get("lr_image", o.lr_image)
        .get("lr_cloud", o.lr_cloud)
        .get("lr_aggregator", o.lr_aggregator)
        .get("weight_decay", o.weight_decay)
        .get("warmup_epochs", o.warmup_epochs)
        .get("momentum", o.momentum)
        .get("beta1", o.beta1)
        .get("beta2", o.beta2)
        .get("eps", o.eps)
        .finish();

    Section(j, "train")
        .get("epochs", c.train.epochs)
        .get("batch_size", c.train.batch_size)
        .get("accum_steps", c.train.accum_steps)
        .get("relation_ramp_epochs", c.train.relation_ramp_epochs)
        .finish();

    Section(j, "scene")
        .get("extent_m", c.scene.extent_m)
        .get("landmarks", c.scene.landmarks)
        .get("corridor_half_width_m", c.scene.corridor_half_width_m)
        .finish();

    auto& t = c.trajectory;
    Section(j, "trajectory")
        .get_enum("kind", t.kind, datapipe::parse_trajectory_kind)
        .get("count", t.count)
        .get("step_m", t.step_m)
        .get("start", t.start)
        .get("heading_rad", t.heading_rad)
        .get("turn_sigma_rad", t.turn_sigma_rad)
        .finish();

    auto& rd = c.render;
    Section(j, "render")
        .get("image_height", rd.image_height)
        .get("image_width", rd.image_width)
        .get("fov_up_deg", rd.fov_up_deg)
        .get("fov_down_deg", rd.fov_down_deg)
        .get("sensor_height_m", rd.sensor_height_m)
        .get("max_range_m", rd.max_range_m)
        .get("height_scale_m", rd.height_scale_m)
        .get("render_ground", rd.render_ground)
        .get("cloud_points", rd.cloud_points)
        .get("submap_m", rd.submap_m)
        .get("noise_sigma_m", rd.noise_sigma_m)
        .finish();

    Section(j, "eval")
        .get("eta_m", c.eval.eta_m)
        .get("topn", c.eval.topn)
        .get("spacing_m", c.eval.spacing_m)
        .finish();
    return c;
}

RunConfig load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::exception& ex) {
        throw ConfigError("malformed config " + path.string() + ": " + ex.what());
    }
    const std::string name = j.is_object() ? j.value("profile", "desk") : "desk";
    return from_json(j, profile(name));
}

void save(const std::filesystem::path& path, const RunConfig& cfg) { io::write_text(path, to_json(cfg).dump(2) + "\n"); }

}  // namespace i2p::config
