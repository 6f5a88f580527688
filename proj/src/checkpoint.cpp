#include "idgan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "idgan/errors.hpp"
#include "idgan/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace idgan {

namespace {

constexpr char kMagic[8] = {'I', 'D', 'G', 'A', 'N', 'C', 'K', 'P'};

const std::pair<torch::Dtype, const char*> kDtypes[] = {
    {torch::kFloat32, "f32"}, {torch::kFloat64, "f64"}, {torch::kInt64, "i64"},
    {torch::kUInt8, "u8"}};

const char* dtype_name(torch::Dtype dtype) {
  for (const auto& [d, name] : kDtypes) {
    if (d == dtype) return name;
  }
  throw CheckpointError("unsupported tensor dtype in checkpoint");
}

torch::Dtype dtype_from(const std::string& name) {
  for (const auto& [d, n] : kDtypes) {
    if (name == n) return d;
  }
  throw CheckpointError("unknown tensor dtype '" + name + "' in checkpoint");
}

json options_to_json(const NetworkOptions& o) {
  return {{"max_stage", o.max_stage},           {"channels_base", o.channels_base},
          {"channels_min", o.channels_min},     {"image_channels", o.image_channels},
          {"equalized_lr", o.equalized_lr},     {"pixel_norm", o.pixel_norm},
          {"minibatch_stddev", o.minibatch_stddev}, {"latent_hidden_width", o.latent_hidden_width}};
}

NetworkOptions options_from_json(const json& j) {
  NetworkOptions o;
  o.max_stage = j.at("max_stage").get<int64_t>();
  o.channels_base = j.at("channels_base").get<int64_t>();
  o.channels_min = j.at("channels_min").get<int64_t>();
  o.image_channels = j.at("image_channels").get<int64_t>();
  o.equalized_lr = j.at("equalized_lr").get<bool>();
  o.pixel_norm = j.at("pixel_norm").get<bool>();
  o.minibatch_stddev = j.at("minibatch_stddev").get<bool>();
  o.latent_hidden_width = j.at("latent_hidden_width").get<int64_t>();
  return o;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint is truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::uint64_t architecture_hash(const NetworkOptions& options, int64_t num_identities) {
  json j = options_to_json(options);
  j["num_identities"] = num_identities;
  return fnv1a(j.dump());
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  NamedTensors tensors = ck.model.named_parameters();
  for (const auto& entry : ck.optimizer_state) tensors.push_back(entry);
  if (ck.rng_state.defined()) tensors.emplace_back("rng.state", ck.rng_state);

  json header;
  header["version"] = kCheckpointVersion;
  header["num_identities"] = ck.model.num_identities;
  header["network"] = options_to_json(ck.model.options);
  header["stage"] = ck.model.stage();
  header["alpha"] = ck.model.alpha();
  header["step"] = ck.step;
  header["seed"] = ck.seed;
  header["config_hash"] = architecture_hash(ck.model.options, ck.model.num_identities);

  std::string payload;
  json entries = json::array();
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    entries.push_back({{"name", name},
                       {"dtype", dtype_name(t.scalar_type())},
                       {"shape", t.sizes().vec()},
                       {"nbytes", t.nbytes()}});
    payload.append(static_cast<const char*>(t.data_ptr()), t.nbytes());
  }
  header["tensors"] = std::move(entries);

  std::string body;
  const std::string header_text = header.dump();
  put<std::uint64_t>(body, header_text.size());
  body += header_text;
  put<std::uint64_t>(body, payload.size());
  body += payload;

  std::string file(kMagic, sizeof(kMagic));
  put<std::uint32_t>(file, kCheckpointVersion);
  put<std::uint64_t>(file, body.size());
  file += body;
  put<std::uint64_t>(file, fnv1a(body));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, std::optional<int64_t> expected_identities) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string file = ss.str();

  if (file.size() < sizeof(kMagic) || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(file, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  const auto body_size = take<std::uint64_t>(file, pos);
  if (pos + body_size + sizeof(std::uint64_t) != file.size()) {
    throw CheckpointError("checkpoint is truncated or has trailing data: " + path.string());
  }
  const std::string body = file.substr(pos, body_size);
  pos += body_size;
  if (take<std::uint64_t>(file, pos) != fnv1a(body)) {
    throw CheckpointError("checkpoint checksum mismatch: " + path.string());
  }

  size_t bpos = 0;
  const auto header_size = take<std::uint64_t>(body, bpos);
  if (bpos + header_size > body.size()) throw CheckpointError("checkpoint is truncated");
  json header;
  try {
    header = json::parse(body.substr(bpos, header_size));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  bpos += header_size;
  const auto payload_size = take<std::uint64_t>(body, bpos);
  if (bpos + payload_size != body.size()) throw CheckpointError("checkpoint is truncated");

  Checkpoint ck;
  try {
    const auto k = header.at("num_identities").get<int64_t>();
    if (expected_identities && *expected_identities != k) {
      throw CheckpointError("checkpoint was trained with K=" + std::to_string(k) +
                            " identities but K=" + std::to_string(*expected_identities) +
                            " was expected");
    }
    const auto options = options_from_json(header.at("network"));
    const auto stored_hash = header.at("config_hash").get<std::uint64_t>();
    if (stored_hash != architecture_hash(options, k)) {
      throw CheckpointError("checkpoint config hash does not match its header");
    }
    ck.config_hash = stored_hash;
    ck.step = header.at("step").get<int64_t>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.model = GanModel::create(options, k, header.at("stage").get<int64_t>());

    NamedTensors loaded;
    size_t offset = bpos;
    for (const auto& entry : header.at("tensors")) {
      const auto nbytes = entry.at("nbytes").get<size_t>();
      if (offset + nbytes > body.size()) throw CheckpointError("checkpoint is truncated");
      auto shape = entry.at("shape").get<std::vector<int64_t>>();
      auto t = torch::empty(shape, dtype_from(entry.at("dtype").get<std::string>()));
      if (t.nbytes() != nbytes) throw CheckpointError("checkpoint tensor size mismatch");
      std::memcpy(t.data_ptr(), body.data() + offset, nbytes);
      offset += nbytes;
      loaded.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }

    auto params = ck.model.named_parameters();
    if (loaded.size() < params.size()) throw CheckpointError("checkpoint is missing parameters");
    if (!params.empty() && loaded[0].second.scalar_type() != params[0].second.scalar_type()) {
      ck.model.to(loaded[0].second.scalar_type());
      params = ck.model.named_parameters();
    }
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < params.size(); ++i) {
      auto& [name, param] = params[i];
      const auto& [lname, value] = loaded[i];
      if (name != lname || param.sizes() != value.sizes() ||
          param.scalar_type() != value.scalar_type()) {
        throw CheckpointError("checkpoint parameter '" + lname + "' does not match model '" +
                              name + "'");
      }
      param.copy_(value);
    }
    ck.model.set_alpha(header.at("alpha").get<double>());
    for (size_t i = params.size(); i < loaded.size(); ++i) {
      if (loaded[i].first == "rng.state") {
        ck.rng_state = loaded[i].second;
      } else {
        ck.optimizer_state.push_back(loaded[i]);
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return ck;
}

}  // namespace idgan
