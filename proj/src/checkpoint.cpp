#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "vsid/trainer.hpp"

namespace vsid {

// Container: magic "VSCK" | version u32 | payload length u64 | payload | FNV-1a(payload) u64.
// Payload: kind u32 | shape (7 x u32) | config text | step u64 | n u64 |
//          params, adam_m, adam_v (n x f64 each) | data RNG text | gumbel RNG text |
//          baselines (3 x f64).

namespace {

std::string config_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : c.to_map()) out += k + " = " + v + "\n";
  return out;
}

TrainConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw Error(ErrorCode::CorruptCheckpoint, "bad config line");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return TrainConfig::from_map(kv);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& s) {
  io::Writer payload;
  payload.put(static_cast<std::uint32_t>(s.kind));
  for (std::uint32_t v : {s.shape.dim, s.shape.hidden, s.shape.vocab, s.shape.max_len,
                          s.shape.model_dim, s.shape.n_layers, s.shape.ffn_dim})
    payload.put(v);
  payload.put_string(config_text(s.config));
  payload.put<std::uint64_t>(s.step);
  payload.put<std::uint64_t>(s.params.size());
  require(s.adam_m.size() == s.params.size() && s.adam_v.size() == s.params.size(),
          "optimizer moments must match parameters");
  payload.put_array(std::span<const double>(s.params));
  payload.put_array(std::span<const double>(s.adam_m));
  payload.put_array(std::span<const double>(s.adam_v));
  payload.put_string(s.data_rng.state());
  payload.put_string(s.gumbel_rng.state());
  for (double b : s.baselines) payload.put(b);

  io::Writer out;
  out.put_bytes(kCheckpointMagic, 4);
  out.put(kCheckpointVersion);
  out.put<std::uint64_t>(payload.bytes().size());
  out.put_bytes(payload.bytes().data(), payload.bytes().size());
  out.put(io::fnv1a(payload.bytes()));
  return std::move(out.bytes());
}

ModelState deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader head(bytes, ErrorCode::CorruptCheckpoint);
  char magic[4];
  head.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "not a VSCK checkpoint");
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version));
  const auto len = head.get<std::uint64_t>();
  if (head.remaining() != len + sizeof(std::uint64_t))
    throw Error(ErrorCode::CorruptCheckpoint, "payload length does not match file size");
  const auto payload_bytes = bytes.subspan(16, len);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + 16 + len, sizeof stored);
  if (stored != io::fnv1a(payload_bytes))
    throw Error(ErrorCode::CorruptCheckpoint, "checksum mismatch");

  io::Reader in(payload_bytes, ErrorCode::CorruptCheckpoint);
  ModelState s;
  const auto kind = in.get<std::uint32_t>();
  if (kind < 1 || kind > 3) throw Error(ErrorCode::CorruptCheckpoint, "unknown model kind");
  s.kind = static_cast<ModelKind>(kind);
  for (std::uint32_t* f : {&s.shape.dim, &s.shape.hidden, &s.shape.vocab, &s.shape.max_len,
                           &s.shape.model_dim, &s.shape.n_layers, &s.shape.ffn_dim})
    *f = in.get<std::uint32_t>();
  s.config = parse_config_text(in.get_string());
  s.step = in.get<std::uint64_t>();
  const auto n = in.get<std::uint64_t>();
  for (ParamVector* p : {&s.params, &s.adam_m, &s.adam_v}) {
    const auto a = in.get_array<double>(n);
    p->assign(a.begin(), a.end());
  }
  s.data_rng.set_state(in.get_string());
  s.gumbel_rng.set_state(in.get_string());
  for (double& b : s.baselines) b = in.get<double>();
  if (in.remaining() != 0) throw Error(ErrorCode::CorruptCheckpoint, "trailing payload bytes");
  if (DvaeModel(s.shape).n_params() != n)
    throw Error(ErrorCode::CorruptCheckpoint, "parameter count does not match shape");
  return s;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace vsid
