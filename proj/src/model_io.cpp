// SPDX-License-Identifier: Apache-2.0

#include "vbp/model_io.hpp"

#include <unistd.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vbp/error.hpp"
#include "vbp/fingerprint.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace vbp {

using json = nlohmann::ordered_json;

std::string fingerprint_bytes(std::string_view bytes) {
  const uint64_t h = fnv1a64(bytes.data(), bytes.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  if (!in.good() && !in.eof()) throw FormatError("error reading file: " + path);
  return os.str();
}

std::string fingerprint_file(const std::string& path) {
  return fingerprint_bytes(read_file(path));
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create file: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw FormatError("error writing file: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw FormatError("cannot finalize file " + path + ": " + ec.message());
  }
}

namespace {

constexpr char kModelMagic[] = "VBPM1\n";
constexpr size_t kMagicLen = 6;
constexpr size_t kAlign = 64;

size_t align_up(size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

json spec_json(const ModelSpec& spec) {
  json j;
  j["blocks"] = json::array();
  for (const BlockShape& b : spec.blocks) {
    json jb;
    jb["embed_dim"] = b.embed_dim;
    jb["num_heads"] = b.num_heads;
    jb["mlp"] = {{"d_in", b.mlp.d_in}, {"d_hid", b.mlp.d_hid}, {"d_out", b.mlp.d_out}};
    j["blocks"].push_back(jb);
  }
  j["num_tokens"] = spec.num_tokens;
  j["num_classes"] = spec.num_classes;
  if (spec.patch_embed) j["patch_embed"] = {{"in_features", spec.patch_embed->in_features}};
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  try {
    for (const auto& jb : j.at("blocks")) {
      BlockShape b;
      b.embed_dim = jb.at("embed_dim").get<size_t>();
      b.num_heads = jb.at("num_heads").get<size_t>();
      const auto& m = jb.at("mlp");
      b.mlp = {m.at("d_in").get<size_t>(), m.at("d_hid").get<size_t>(),
               m.at("d_out").get<size_t>()};
      spec.blocks.push_back(b);
    }
    spec.num_tokens = j.at("num_tokens").get<size_t>();
    spec.num_classes = j.at("num_classes").get<size_t>();
    if (j.contains("patch_embed")) {
      spec.patch_embed = PatchEmbed{j.at("patch_embed").at("in_features").get<size_t>()};
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("bad model spec in manifest: ") + e.what());
  }
  return spec;
}

void append_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string spec_to_json(const ModelSpec& spec) { return spec_json(spec).dump(); }

std::string serialize_model(const ModelSpec& spec, const WeightStore& weights) {
  weights.validate(spec);
  const auto req = required_weights(spec);

  json manifest;
  manifest["spec"] = spec_json(spec);
  manifest["tensors"] = json::array();
  size_t offset = 0;  // relative to the data section
  for (const auto& ts : req) {
    const Tensor& t = weights.get(ts.name);
    const size_t nbytes = t.numel() * sizeof(float);
    json jt;
    jt["name"] = ts.name;
    jt["shape"] = t.shape;
    jt["offset"] = offset;
    jt["nbytes"] = nbytes;
    manifest["tensors"].push_back(jt);
    offset = align_up(offset + nbytes);
  }
  const std::string mbytes = manifest.dump();

  std::string out;
  out.reserve(kMagicLen + 8 + mbytes.size() + offset + kAlign);
  out.append(kModelMagic, kMagicLen);
  append_u64_le(out, mbytes.size());
  out += mbytes;
  out.resize(align_up(out.size()), '\0');  // data section start
  const size_t data_start = out.size();
  for (const auto& jt : manifest["tensors"]) {
    const size_t rel = jt["offset"].get<size_t>();
    const Tensor& t = weights.get(jt["name"].get<std::string>());
    out.resize(data_start + rel, '\0');
    const char* raw = reinterpret_cast<const char*>(t.data.data());
    out.append(raw, t.numel() * sizeof(float));
  }
  return out;
}

std::pair<ModelSpec, WeightStore> parse_model(std::string_view bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kModelMagic, kMagicLen) != 0) {
    throw MagicError("not a VBPM model file (bad magic)");
  }
  if (bytes.size() < kMagicLen + 8) throw TruncatedError("model file truncated in header");
  const uint64_t mlen = read_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + kMagicLen);
  if (bytes.size() < kMagicLen + 8 + mlen) throw TruncatedError("model file truncated in manifest");

  json manifest;
  try {
    manifest = json::parse(bytes.substr(kMagicLen + 8, mlen));
  } catch (const json::exception& e) {
    throw ManifestError(std::string("model manifest is not valid JSON: ") + e.what());
  }

  ModelSpec spec = spec_from_json(manifest.at("spec"));
  try {
    spec.validate();
  } catch (const Error& e) {
    throw ManifestError(std::string("model manifest spec invalid: ") + e.what());
  }

  const size_t data_start = align_up(kMagicLen + 8 + mlen);
  WeightStore ws;
  try {
    for (const auto& jt : manifest.at("tensors")) {
      const std::string name = jt.at("name").get<std::string>();
      const std::vector<size_t> shape = jt.at("shape").get<std::vector<size_t>>();
      const size_t rel = jt.at("offset").get<size_t>();
      const size_t nbytes = jt.at("nbytes").get<size_t>();
      size_t numel = 1;
      for (size_t d : shape) numel *= d;
      if (shape.empty() || nbytes != numel * sizeof(float)) {
        throw ManifestError("manifest shape disagrees with nbytes for tensor " + name);
      }
      if (data_start + rel + nbytes > bytes.size()) {
        throw TruncatedError("model file truncated in tensor data for " + name);
      }
      std::vector<float> data(numel);
      std::memcpy(data.data(), bytes.data() + data_start + rel, nbytes);
      ws.put(name, Tensor(shape, std::move(data)));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("bad tensor entry in model manifest: ") + e.what());
  }

  try {
    ws.validate(spec);
  } catch (const Error& e) {
    throw ManifestError(std::string("manifest disagrees with spec: ") + e.what());
  }
  return {std::move(spec), std::move(ws)};
}

std::string save_model_file(const ModelSpec& spec, const WeightStore& weights,
                            const std::string& path) {
  const std::string bytes = serialize_model(spec, weights);
  write_file_atomic(path, bytes);
  return fingerprint_bytes(bytes);
}

LoadedModel load_model_file(const std::string& path) {
  const std::string bytes = read_file(path);
  auto [spec, weights] = parse_model(bytes);
  return {std::move(spec), std::move(weights), fingerprint_bytes(bytes)};
}

}  // namespace vbp
