#include "facereenact/config.hpp"

#include <fstream>
#include <set>

namespace facereenact {

using nlohmann::json;

namespace {

// Reads an object with a closed key set. Keys are checked on finish().
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  bool has(const char* key) {
    known_.insert(key);
    return j_.contains(key);
  }

  template <class V>
  void read(const char* key, V& out) {
    if (!has(key)) return;
    out = convert<V>(j_.at(key), path(key));
  }

  const json& child(const char* key) {
    known_.insert(key);
    return j_.at(key);
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) throw ConfigError("unknown config key '" + path(it.key().c_str()) + "'");
    }
  }

  template <class V>
  static V convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("config key '" + where + "' must be a boolean");
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError("config key '" + where + "' must be a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("config key '" + where + "' must be a number");
    } else {
      if (!v.is_string()) throw ConfigError("config key '" + where + "' must be a string");
    }
    return v.get<V>();
  }

 private:
  std::string label() const { return where_.empty() ? "config" : "config key '" + where_ + "'"; }

  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

const char* conditioning_name(FusionConditioning c) {
  return c == FusionConditioning::Own ? "own" : "cross";
}

FusionConditioning parse_conditioning(const std::string& s, const std::string& where) {
  if (s == "own") return FusionConditioning::Own;
  if (s == "cross") return FusionConditioning::Cross;
  throw ConfigError("config key '" + where + "' must be own or cross, got '" + s + "'");
}

BlockType parse_block_type(const std::string& s, const std::string& where) {
  if (s == "shared") return BlockType::Shared;
  if (s == "layer_specific") return BlockType::LayerSpecific;
  throw ConfigError("config key '" + where + "' must be shared or layer_specific, got '" + s + "'");
}

}  // namespace

json to_json(const ModelConfig& c) {
  json j;
  j["arch"] = {{"name", c.arch.name}, {"resolution", c.arch.resolution}, {"channel_cap", c.arch.channel_cap}};
  j["generator"] = {{"seed", c.generator.seed},
                    {"mapping_layers", c.generator.mapping_layers},
                    {"noise", c.generator.noise},
                    {"noise_strength", c.generator.noise_strength},
                    {"noise_seed", c.generator.noise_seed}};
  const EncoderSuiteConfig& e = c.encoders;
  j["encoders"] = {{"expression_dim", e.expression_dim},       {"identity_dim", e.identity_dim},
                   {"appearance_seed", e.appearance_seed},     {"pose_seed", e.pose_seed},
                   {"identity_seed", e.identity_seed},         {"inversion_seed", e.inversion_seed},
                   {"pose_mean_normalize", e.pose_mean_normalize}, {"inversion_clamp", e.inversion_clamp},
                   {"appearance_encoder", e.appearance_encoder}, {"pose_encoder", e.pose_encoder}};
  j["fusion"] = {{"conditioning", conditioning_name(c.fusion.conditioning)},
                 {"modulation_init_std", c.fusion.modulation_init_std},
                 {"seed", c.fusion.seed}};
  j["hypernet"] = {{"sharing", c.hypernet.sharing},
                   {"zero_heads", c.hypernet.zero_heads},
                   {"slope", c.hypernet.slope},
                   {"seed", c.hypernet.seed}};
  if (c.assignment) {
    json a = json::array();
    for (const auto& [layer, type] : c.assignment->entries) {
      a.push_back({{"layer", layer}, {"type", block_type_name(type)}});
    }
    j["assignment"] = a;
  }
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  ObjectReader r(j, "model");
  if (r.has("arch")) {
    ObjectReader a(r.child("arch"), "model.arch");
    a.read("name", c.arch.name);
    a.read("resolution", c.arch.resolution);
    a.read("channel_cap", c.arch.channel_cap);
    a.finish();
  }
  if (r.has("generator")) {
    ObjectReader g(r.child("generator"), "model.generator");
    g.read("seed", c.generator.seed);
    g.read("mapping_layers", c.generator.mapping_layers);
    g.read("noise", c.generator.noise);
    g.read("noise_strength", c.generator.noise_strength);
    g.read("noise_seed", c.generator.noise_seed);
    g.finish();
  }
  if (r.has("encoders")) {
    ObjectReader e(r.child("encoders"), "model.encoders");
    EncoderSuiteConfig& x = c.encoders;
    e.read("expression_dim", x.expression_dim);
    e.read("identity_dim", x.identity_dim);
    e.read("appearance_seed", x.appearance_seed);
    e.read("pose_seed", x.pose_seed);
    e.read("identity_seed", x.identity_seed);
    e.read("inversion_seed", x.inversion_seed);
    e.read("pose_mean_normalize", x.pose_mean_normalize);
    e.read("inversion_clamp", x.inversion_clamp);
    e.read("appearance_encoder", x.appearance_encoder);
    e.read("pose_encoder", x.pose_encoder);
    e.finish();
  }
  if (r.has("fusion")) {
    ObjectReader f(r.child("fusion"), "model.fusion");
    std::string cond = conditioning_name(c.fusion.conditioning);
    f.read("conditioning", cond);
    c.fusion.conditioning = parse_conditioning(cond, f.path("conditioning"));
    f.read("modulation_init_std", c.fusion.modulation_init_std);
    f.read("seed", c.fusion.seed);
    f.finish();
  }
  if (r.has("hypernet")) {
    ObjectReader h(r.child("hypernet"), "model.hypernet");
    h.read("sharing", c.hypernet.sharing);
    h.read("zero_heads", c.hypernet.zero_heads);
    h.read("slope", c.hypernet.slope);
    h.read("seed", c.hypernet.seed);
    h.finish();
  }
  if (r.has("assignment")) {
    const json& a = r.child("assignment");
    if (!a.is_array()) throw ConfigError("config key 'model.assignment' must be an array");
    BlockAssignment assignment;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ObjectReader e(a[i], "model.assignment[" + std::to_string(i) + "]");
      if (!e.has("layer") || !e.has("type")) {
        throw ConfigError("config key 'model.assignment[" + std::to_string(i) + "]' needs layer and type");
      }
      std::size_t layer = 0;
      std::string type;
      e.read("layer", layer);
      e.read("type", type);
      e.finish();
      assignment.entries.emplace_back(layer, parse_block_type(type, e.path("type")));
    }
    c.assignment = std::move(assignment);
  }
  r.finish();
  return c;
}

json to_json(const TrainerConfig& c) {
  const LossWeights& w = c.loss.weights;
  return {{"seed", c.seed},
          {"model", to_json(c.model)},
          {"loss",
           {{"lambda_pix", w.lambda_pix},
            {"lambda_lpips", w.lambda_lpips},
            {"lambda_id", w.lambda_id},
            {"lambda_sh", w.lambda_sh},
            {"lambda_g", w.lambda_g},
            {"cross_gaze", c.loss.cross_gaze}}},
          {"adam",
           {{"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"reset_moments_between_phases", c.adam.reset_moments_between_phases}}}};
}

namespace {

void read_trainer_fields(ObjectReader& r, TrainerConfig& c) {
  r.read("seed", c.seed);
  if (r.has("model")) c.model = model_config_from_json(r.child("model"));
  if (r.has("loss")) {
    ObjectReader l(r.child("loss"), "loss");
    LossWeights& w = c.loss.weights;
    l.read("lambda_pix", w.lambda_pix);
    l.read("lambda_lpips", w.lambda_lpips);
    l.read("lambda_id", w.lambda_id);
    l.read("lambda_sh", w.lambda_sh);
    l.read("lambda_g", w.lambda_g);
    l.read("cross_gaze", c.loss.cross_gaze);
    l.finish();
  }
  if (r.has("adam")) {
    ObjectReader a(r.child("adam"), "adam");
    a.read("beta1", c.adam.beta1);
    a.read("beta2", c.adam.beta2);
    a.read("eps", c.adam.eps);
    a.read("reset_moments_between_phases", c.adam.reset_moments_between_phases);
    a.finish();
  }
}

}  // namespace

TrainerConfig trainer_config_from_json(const json& j) {
  TrainerConfig c;
  ObjectReader r(j, "");
  read_trainer_fields(r, c);
  r.finish();
  return c;
}

json to_json(const CurriculumSchedule& s) {
  json a = json::array();
  for (const PhaseSpec& p : s.phases) {
    a.push_back({{"phase", phase_number(p.phase)},
                 {"learning_rate", p.learning_rate},
                 {"batch_size", p.batch_size},
                 {"steps", p.steps},
                 {"pair_policy", pair_policy_name(p.pair_policy)}});
  }
  return a;
}

CurriculumSchedule schedule_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("config key 'schedule' must be an array");
  CurriculumSchedule s;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = "schedule[" + std::to_string(i) + "]";
    ObjectReader r(j[i], where);
    if (!r.has("phase")) throw ConfigError("config key '" + where + "' needs phase");
    int n = 0;
    r.read("phase", n);
    PhaseSpec p;
    try {
      p = PhaseSpec::defaults(phase_from_number(n), 0);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + r.path("phase") + "': " + e.what());
    }
    r.read("learning_rate", p.learning_rate);
    r.read("batch_size", p.batch_size);
    r.read("steps", p.steps);
    std::string policy = pair_policy_name(p.pair_policy);
    r.read("pair_policy", policy);
    p.pair_policy = parse_pair_policy(policy);
    r.finish();
    s.phases.push_back(p);
  }
  return s;
}

json to_json(const RunConfig& c) {
  json j = to_json(c.trainer);
  j["schedule"] = to_json(c.schedule);
  json d = json::object();
  if (c.dataset.path) d["path"] = c.dataset.path->string();
  if (c.dataset.synthetic) {
    const SyntheticDatasetSpec& s = *c.dataset.synthetic;
    d["synthetic"] = {{"identities", s.identities},
                      {"frames_per_identity", s.frames_per_identity},
                      {"resolution", s.resolution},
                      {"seed", s.seed}};
  }
  j["dataset"] = d;
  j["output_dir"] = c.output_dir.string();
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  read_trainer_fields(r, c.trainer);
  if (r.has("schedule")) c.schedule = schedule_from_json(r.child("schedule"));
  if (r.has("dataset")) {
    ObjectReader d(r.child("dataset"), "dataset");
    if (d.has("path")) {
      std::string p;
      d.read("path", p);
      c.dataset.path = p;
    }
    if (d.has("synthetic")) {
      ObjectReader s(d.child("synthetic"), "dataset.synthetic");
      SyntheticDatasetSpec spec;
      s.read("identities", spec.identities);
      s.read("frames_per_identity", spec.frames_per_identity);
      s.read("resolution", spec.resolution);
      s.read("seed", spec.seed);
      s.finish();
      c.dataset.synthetic = spec;
    }
    d.finish();
  }
  if (r.has("output_dir")) {
    std::string o;
    r.read("output_dir", o);
    c.output_dir = o;
  }
  r.read("checkpoint_every", c.checkpoint_every);
  r.finish();
  return c;
}

void RunConfig::validate() const {
  trainer.loss.weights.validate();
  schedule.validate();
  const GeneratorArch arch = trainer.model.arch.build();
  if (trainer.model.assignment) trainer.model.assignment->validate(arch);
  if (dataset.path.has_value() == dataset.synthetic.has_value()) {
    throw ConfigError("config key 'dataset' needs exactly one of path or synthetic");
  }
  if (dataset.synthetic && dataset.synthetic->resolution != arch.output_resolution) {
    throw ConfigError("config key 'dataset.synthetic.resolution' (" + std::to_string(dataset.synthetic->resolution) +
                      ") must match the generator resolution " + std::to_string(arch.output_resolution));
  }
  if (output_dir.empty()) throw ConfigError("config key 'output_dir' must not be empty");
}

FrameDataset DatasetSpec::load(std::size_t expression_dim) const {
  if (path) return ingest(*path);
  if (synthetic) {
    return generate_synthetic_dataset(synthetic->identities, synthetic->frames_per_identity, synthetic->resolution,
                                      synthetic->seed, expression_dim);
  }
  throw ConfigError("dataset spec is empty");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace facereenact
