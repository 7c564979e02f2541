#include "ppgfm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ppgfm {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void parse_filter(const json& j, FilterSpec& f) {
  reject_unknown(j, {"order", "low_cut_hz", "high_cut_hz", "stopband_atten_db"},
                 "preprocess.filter");
  read(j, "order", f.order);
  read(j, "low_cut_hz", f.low_cut_hz);
  read(j, "high_cut_hz", f.high_cut_hz);
  read(j, "stopband_atten_db", f.stopband_atten_db);
}

void parse_preprocess(const json& j, PreprocessConfig& p) {
  reject_unknown(j,
                 {"window_s", "flat_threshold", "flat_eps_scale", "flat_min_run",
                  "target_hz", "eps_std", "filter"},
                 "preprocess");
  read(j, "window_s", p.window_s);
  read(j, "flat_threshold", p.flat_threshold);
  read(j, "flat_eps_scale", p.flat_eps_scale);
  read(j, "flat_min_run", p.flat_min_run);
  read(j, "target_hz", p.target_hz);
  read(j, "eps_std", p.eps_std);
  if (j.contains("filter")) parse_filter(j.at("filter"), p.filter);
}

void parse_augment(const json& j, AugmentConfig& a, const std::string& where) {
  reject_unknown(j,
                 {"crop_prob", "crop_keep_lo", "crop_keep_hi", "noise_prob",
                  "noise_sigma_lo", "noise_sigma_hi", "flip_prob", "negate_prob",
                  "scale_prob", "scale_lo", "scale_hi"},
                 where);
  read(j, "crop_prob", a.crop_prob);
  read(j, "crop_keep_lo", a.crop_keep_lo);
  read(j, "crop_keep_hi", a.crop_keep_hi);
  read(j, "noise_prob", a.noise_prob);
  read(j, "noise_sigma_lo", a.noise_sigma_lo);
  read(j, "noise_sigma_hi", a.noise_sigma_hi);
  read(j, "flip_prob", a.flip_prob);
  read(j, "negate_prob", a.negate_prob);
  read(j, "scale_prob", a.scale_prob);
  read(j, "scale_lo", a.scale_lo);
  read(j, "scale_hi", a.scale_hi);
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j,
                 {"temperature", "alpha", "batch_pairs", "steps", "lr", "seed",
                  "bins", "checkpoint_every"},
                 "train");
  read(j, "temperature", t.temperature);
  read(j, "alpha", t.alpha);
  read(j, "batch_pairs", t.batch_pairs);
  read(j, "steps", t.steps);
  read(j, "lr", t.lr);
  read(j, "seed", t.seed);
  read(j, "bins", t.bins);
  read(j, "checkpoint_every", t.checkpoint_every);
}

void parse_encoder(const json& j, EncoderConfig& e) {
  reject_unknown(j,
                 {"n_blocks", "base_filters", "filters_double_every", "kernel",
                  "stride", "maxpool_kernel", "maxpool_stride", "dropout",
                  "embedding_dim", "input_len", "input_channels"},
                 "model.encoder");
  read(j, "n_blocks", e.n_blocks);
  read(j, "base_filters", e.base_filters);
  read(j, "filters_double_every", e.filters_double_every);
  read(j, "kernel", e.kernel);
  read(j, "stride", e.stride);
  read(j, "maxpool_kernel", e.maxpool_kernel);
  read(j, "maxpool_stride", e.maxpool_stride);
  read(j, "dropout", e.dropout);
  read(j, "embedding_dim", e.embedding_dim);
  read(j, "input_len", e.input_len);
  read(j, "input_channels", e.input_channels);
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j, {"encoder", "moe_experts", "moe_hidden", "init_seed"}, "model");
  if (j.contains("encoder")) parse_encoder(j.at("encoder"), m.encoder);
  read(j, "moe_experts", m.moe_experts);
  read(j, "moe_hidden", m.moe_hidden);
  read(j, "init_seed", m.init_seed);
}

void parse_eval(const json& j, EvalConfig& e) {
  reject_unknown(j, {"split_ratios", "bootstrap_n", "cv_folds", "pool_subjects"},
                 "eval");
  if (j.contains("split_ratios")) {
    const auto v = j.at("split_ratios").get<std::vector<double>>();
    if (v.size() != 3)
      throw std::invalid_argument("config: split_ratios needs exactly 3 entries");
    e.split_ratios = {v[0], v[1], v[2]};
  }
  read(j, "bootstrap_n", e.bootstrap_n);
  read(j, "cv_folds", e.cv_folds);
  read(j, "pool_subjects", e.pool_subjects);
}

json augment_to_json(const AugmentConfig& a) {
  return json{{"crop_prob", a.crop_prob},
              {"crop_keep_lo", a.crop_keep_lo},
              {"crop_keep_hi", a.crop_keep_hi},
              {"noise_prob", a.noise_prob},
              {"noise_sigma_lo", a.noise_sigma_lo},
              {"noise_sigma_hi", a.noise_sigma_hi},
              {"flip_prob", a.flip_prob},
              {"negate_prob", a.negate_prob},
              {"scale_prob", a.scale_prob},
              {"scale_lo", a.scale_lo},
              {"scale_hi", a.scale_hi}};
}

}  // namespace

void RunConfig::validate() const {
  if (!(preprocess.window_s > 0.0))
    throw std::invalid_argument("config: preprocess.window_s must be positive");
  if (preprocess.flat_threshold < 0.0 || preprocess.flat_threshold > 1.0)
    throw std::invalid_argument("config: preprocess.flat_threshold outside [0,1]");
  augment_participant.validate();
  augment_morphology.validate();
  train.validate();
  model.validate();
  if (eval.bootstrap_n < 1 || eval.cv_folds < 2)
    throw std::invalid_argument("config: invalid eval section");
  double s = 0.0;
  for (double r : eval.split_ratios) s += r;
  if (std::abs(s - 1.0) > 1e-9)
    throw std::invalid_argument("config: eval.split_ratios must sum to 1");
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = json::parse(json_text);
  reject_unknown(j, {"preprocess", "augment", "train", "model", "eval"}, "config root");
  RunConfig c;
  if (j.contains("preprocess")) parse_preprocess(j.at("preprocess"), c.preprocess);
  if (j.contains("augment")) {
    reject_unknown(j.at("augment"), {"participant", "morphology"}, "augment");
    if (j.at("augment").contains("participant"))
      parse_augment(j.at("augment").at("participant"), c.augment_participant,
                    "augment.participant");
    if (j.at("augment").contains("morphology"))
      parse_augment(j.at("augment").at("morphology"), c.augment_morphology,
                    "augment.morphology");
  }
  if (j.contains("train")) parse_train(j.at("train"), c.train);
  if (j.contains("model")) parse_model(j.at("model"), c.model);
  if (j.contains("eval")) parse_eval(j.at("eval"), c.eval);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["preprocess"] = json{{"window_s", c.preprocess.window_s},
                         {"flat_threshold", c.preprocess.flat_threshold},
                         {"flat_eps_scale", c.preprocess.flat_eps_scale},
                         {"flat_min_run", c.preprocess.flat_min_run},
                         {"target_hz", c.preprocess.target_hz},
                         {"eps_std", c.preprocess.eps_std},
                         {"filter", json{{"order", c.preprocess.filter.order},
                                         {"low_cut_hz", c.preprocess.filter.low_cut_hz},
                                         {"high_cut_hz", c.preprocess.filter.high_cut_hz},
                                         {"stopband_atten_db",
                                          c.preprocess.filter.stopband_atten_db}}}};
  j["augment"] = json{{"participant", augment_to_json(c.augment_participant)},
                      {"morphology", augment_to_json(c.augment_morphology)}};
  j["train"] = json{{"temperature", c.train.temperature},
                    {"alpha", c.train.alpha},
                    {"batch_pairs", c.train.batch_pairs},
                    {"steps", c.train.steps},
                    {"lr", c.train.lr},
                    {"seed", c.train.seed},
                    {"bins", c.train.bins},
                    {"checkpoint_every", c.train.checkpoint_every}};
  j["model"] = json{
      {"encoder",
       json{{"n_blocks", c.model.encoder.n_blocks},
            {"base_filters", c.model.encoder.base_filters},
            {"filters_double_every", c.model.encoder.filters_double_every},
            {"kernel", c.model.encoder.kernel},
            {"stride", c.model.encoder.stride},
            {"maxpool_kernel", c.model.encoder.maxpool_kernel},
            {"maxpool_stride", c.model.encoder.maxpool_stride},
            {"dropout", c.model.encoder.dropout},
            {"embedding_dim", c.model.encoder.embedding_dim},
            {"input_len", c.model.encoder.input_len},
            {"input_channels", c.model.encoder.input_channels}}},
      {"moe_experts", c.model.moe_experts},
      {"moe_hidden", c.model.moe_hidden},
      {"init_seed", c.model.init_seed}};
  j["eval"] = json{{"split_ratios", c.eval.split_ratios},
                   {"bootstrap_n", c.eval.bootstrap_n},
                   {"cv_folds", c.eval.cv_folds},
                   {"pool_subjects", c.eval.pool_subjects}};
  return j.dump();  // nlohmann orders keys, so the dump is canonical
}

std::string config_hash(const RunConfig& config) {
  const std::string dump = dump_run_config(config);
  uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(buf);
}

}  // namespace ppgfm
