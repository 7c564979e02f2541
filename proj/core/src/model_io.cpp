#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "ppgfm/model.hpp"

namespace ppgfm {

namespace {

constexpr char kMagic[4] = {'P', 'P', 'G', 'M'};
constexpr uint16_t kVersion = 1;

using json = nlohmann::json;

json encoder_to_json(const EncoderConfig& e) {
  return json{{"n_blocks", e.n_blocks},
              {"base_filters", e.base_filters},
              {"filters_double_every", e.filters_double_every},
              {"kernel", e.kernel},
              {"stride", e.stride},
              {"maxpool_kernel", e.maxpool_kernel},
              {"maxpool_stride", e.maxpool_stride},
              {"dropout", e.dropout},
              {"embedding_dim", e.embedding_dim},
              {"input_len", e.input_len},
              {"input_channels", e.input_channels}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig e;
  e.n_blocks = j.at("n_blocks").get<int64_t>();
  e.base_filters = j.at("base_filters").get<int64_t>();
  e.filters_double_every = j.at("filters_double_every").get<int64_t>();
  e.kernel = j.at("kernel").get<int64_t>();
  e.stride = j.at("stride").get<int64_t>();
  e.maxpool_kernel = j.at("maxpool_kernel").get<int64_t>();
  e.maxpool_stride = j.at("maxpool_stride").get<int64_t>();
  e.dropout = j.at("dropout").get<double>();
  e.embedding_dim = j.at("embedding_dim").get<int64_t>();
  e.input_len = j.at("input_len").get<int64_t>();
  e.input_channels = j.at("input_channels").get<int64_t>();
  return e;
}

void write_tensor(std::ofstream& out, const std::string& name,
                  const Tensor<float>& t) {
  const auto name_len = static_cast<uint16_t>(name.size());
  out.write(reinterpret_cast<const char*>(&name_len), 2);
  out.write(name.data(), name_len);
  const auto ndim = static_cast<uint8_t>(t.ndim());
  out.write(reinterpret_cast<const char*>(&ndim), 1);
  for (int64_t d = 0; d < t.ndim(); ++d) {
    const auto dim = static_cast<uint32_t>(t.dim(d));
    out.write(reinterpret_cast<const char*>(&dim), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * 4));
}

std::pair<std::string, Tensor<float>> read_tensor(std::ifstream& in) {
  uint16_t name_len = 0;
  in.read(reinterpret_cast<char*>(&name_len), 2);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  uint8_t ndim = 0;
  in.read(reinterpret_cast<char*>(&ndim), 1);
  std::vector<int64_t> shape(ndim);
  for (auto& d : shape) {
    uint32_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), 4);
    d = dim;
  }
  Tensor<float> t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * 4));
  if (!in.good()) throw std::runtime_error("checkpoint: truncated tensor " + name);
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, SslModel<float>& model,
                     nn::Adam<float>* adam, const CheckpointExtras& extras) {
  json meta;
  meta["format_version"] = kVersion;
  json m;
  m["mode"] = model.config().mode == ModelMode::morphology ? "s" : "p";
  m["moe_experts"] = model.config().moe_experts;
  m["moe_hidden"] = model.config().moe_hidden;
  m["init_seed"] = model.config().init_seed;
  m["encoder"] = encoder_to_json(model.config().encoder);
  meta["model"] = m;
  if (extras.bin_edges)
    meta["bin_edges"] = json{{"b", extras.bin_edges->b}, {"edges", extras.bin_edges->edges}};
  else
    meta["bin_edges"] = nullptr;
  meta["train_step"] = extras.train_step;
  if (adam) {
    meta["adam"] = json{{"lr", adam->config().lr},
                        {"beta1", adam->config().beta1},
                        {"beta2", adam->config().beta2},
                        {"eps", adam->config().eps},
                        {"step", adam->step_count()}};
  } else {
    meta["adam"] = nullptr;
  }
  const std::string blob = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 2);
  const auto json_len = static_cast<uint64_t>(blob.size());
  out.write(reinterpret_cast<const char*>(&json_len), 8);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));

  auto params = model.parameters();
  auto buffers = model.buffers();
  uint32_t n_tensors = static_cast<uint32_t>(params.size() + buffers.size());
  if (adam) n_tensors += static_cast<uint32_t>(2 * adam->params().size());
  out.write(reinterpret_cast<const char*>(&n_tensors), 4);

  for (auto& p : params) write_tensor(out, "param." + p.name, p.var.value());
  for (auto& b : buffers) write_tensor(out, "buffer." + b.name, *b.tensor);
  if (adam) {
    for (size_t i = 0; i < adam->params().size(); ++i) {
      write_tensor(out, "adam_m." + adam->params()[i].name, adam->moment1(i));
      write_tensor(out, "adam_v." + adam->params()[i].name, adam->moment2(i));
    }
  }
  if (!out.good()) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  if (version != kVersion)
    throw std::runtime_error("unknown checkpoint version " + std::to_string(version));
  uint64_t json_len = 0;
  in.read(reinterpret_cast<char*>(&json_len), 8);
  std::string blob(json_len, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(json_len));
  if (!in.good()) throw std::runtime_error("truncated checkpoint header in " + path);
  const json meta = json::parse(blob);

  ModelConfig config;
  const auto& m = meta.at("model");
  config.mode = m.at("mode").get<std::string>() == "s" ? ModelMode::morphology
                                                       : ModelMode::participant;
  config.moe_experts = m.at("moe_experts").get<int64_t>();
  config.moe_hidden = m.at("moe_hidden").get<int64_t>();
  config.init_seed = m.at("init_seed").get<uint64_t>();
  config.encoder = encoder_from_json(m.at("encoder"));

  LoadedCheckpoint out;
  out.model = std::make_unique<SslModel<float>>(config);
  out.extras.train_step = meta.at("train_step").get<int64_t>();
  if (!meta.at("bin_edges").is_null()) {
    BinEdges edges;
    edges.b = meta.at("bin_edges").at("b").get<int>();
    edges.edges = meta.at("bin_edges").at("edges").get<std::vector<double>>();
    out.extras.bin_edges = std::move(edges);
  }
  if (!meta.at("adam").is_null()) {
    out.has_adam = true;
    out.adam_config.lr = meta.at("adam").at("lr").get<float>();
    out.adam_config.beta1 = meta.at("adam").at("beta1").get<float>();
    out.adam_config.beta2 = meta.at("adam").at("beta2").get<float>();
    out.adam_config.eps = meta.at("adam").at("eps").get<float>();
    out.adam_step = meta.at("adam").at("step").get<int64_t>();
  }

  uint32_t n_tensors = 0;
  in.read(reinterpret_cast<char*>(&n_tensors), 4);
  std::map<std::string, Tensor<float>> by_name;
  for (uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, t] = read_tensor(in);
    by_name.emplace(std::move(name), std::move(t));
  }

  auto fill = [&](const std::string& key, Tensor<float>& dst) {
    auto it = by_name.find(key);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint missing tensor " + key);
    if (!dst.same_shape(it->second))
      throw std::runtime_error("checkpoint shape mismatch for " + key);
    dst = it->second;
  };

  for (auto& p : out.model->parameters()) fill("param." + p.name, p.var.value_mut());
  for (auto& b : out.model->buffers()) fill("buffer." + b.name, *b.tensor);
  if (out.has_adam) {
    for (auto& p : out.model->parameters()) {
      out.adam_m.emplace_back(p.name, by_name.at("adam_m." + p.name));
      out.adam_v.emplace_back(p.name, by_name.at("adam_v." + p.name));
    }
  }
  return out;
}

nn::Adam<float> restore_adam(SslModel<float>& model, const LoadedCheckpoint& ckpt) {
  if (!ckpt.has_adam) throw std::runtime_error("checkpoint has no optimizer state");
  nn::Adam<float> adam(model.parameters(), ckpt.adam_config);
  for (size_t i = 0; i < adam.params().size(); ++i) {
    const auto& name = adam.params()[i].name;
    if (ckpt.adam_m[i].first != name)
      throw std::runtime_error("optimizer state order mismatch at " + name);
    adam.moment1(i) = ckpt.adam_m[i].second;
    adam.moment2(i) = ckpt.adam_v[i].second;
  }
  adam.set_step_count(ckpt.adam_step);
  return adam;
}

}  // namespace ppgfm
