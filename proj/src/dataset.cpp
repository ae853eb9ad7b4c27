// SPDX-License-Identifier: Apache-2.0

#include "vbp/dataset.hpp"

#include <cstring>

#include <json.hpp>

#include "vbp/error.hpp"
#include "vbp/fingerprint.hpp"
#include "vbp/rng.hpp"

namespace vbp {

using json = nlohmann::ordered_json;

void Dataset::validate() const {
  if (tokens < 1 || dim < 1 || classes < 1) throw UsageError("dataset dims must be >= 1");
  if (features.size() != labels.size()) throw UsageError("features/labels length mismatch");
  for (const Tensor& f : features) {
    if (f.ndim() != 2 || f.shape[0] != tokens || f.shape[1] != dim) {
      throw DimensionError("dataset sample has shape " + f.shape_str());
    }
  }
  for (uint32_t l : labels) {
    if (l >= classes) throw UsageError("label out of range");
  }
}

Dataset Dataset::slice(size_t skip, size_t take) const {
  Dataset out;
  out.tokens = tokens;
  out.dim = dim;
  out.classes = classes;
  const size_t n = size();
  const size_t from = std::min(skip, n);
  const size_t to = std::min(from + take, n);
  out.features.assign(features.begin() + from, features.begin() + to);
  out.labels.assign(labels.begin() + from, labels.begin() + to);
  return out;
}

Dataset gen_data(size_t samples, size_t tokens, size_t dim, size_t classes, uint64_t seed,
                 double separation) {
  if (samples < 1 || tokens < 1 || dim < 1 || classes < 1) {
    throw UsageError("gen_data counts must be >= 1");
  }
  Rng trng = Rng::stream(seed, "templates");
  std::vector<std::vector<float>> templates(classes);
  for (size_t c = 0; c < classes; ++c) {
    templates[c].resize(tokens * dim);
    for (float& v : templates[c]) v = static_cast<float>(separation * trng.gaussian());
  }
  Rng nrng = Rng::stream(seed, "noise");
  Dataset ds;
  ds.tokens = tokens;
  ds.dim = dim;
  ds.classes = classes;
  ds.features.reserve(samples);
  ds.labels.reserve(samples);
  for (size_t i = 0; i < samples; ++i) {
    const uint32_t label = static_cast<uint32_t>(i % classes);
    Tensor f({tokens, dim});
    const std::vector<float>& tmpl = templates[label];
    for (size_t j = 0; j < f.data.size(); ++j) {
      f.data[j] = tmpl[j] + static_cast<float>(nrng.gaussian());
    }
    ds.features.push_back(std::move(f));
    ds.labels.push_back(label);
  }
  return ds;
}

Tensor batch_features(const Dataset& ds, size_t start, size_t count) {
  if (start + count > ds.size()) throw UsageError("batch range out of dataset bounds");
  if (count < 1) throw UsageError("batch must contain at least one sample");
  Tensor b({count, ds.tokens, ds.dim});
  const size_t stride = ds.tokens * ds.dim;
  for (size_t i = 0; i < count; ++i) {
    std::memcpy(b.data.data() + i * stride, ds.features[start + i].data.data(),
                stride * sizeof(float));
  }
  return b;
}

namespace {
constexpr char kDataMagic[] = "VBPD1\n";
constexpr size_t kMagicLen = 6;

void append_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace

std::string serialize_dataset(const Dataset& ds) {
  ds.validate();
  json manifest;
  manifest["samples"] = ds.size();
  manifest["tokens"] = ds.tokens;
  manifest["dim"] = ds.dim;
  manifest["classes"] = ds.classes;
  const std::string mbytes = manifest.dump();

  std::string out;
  const size_t stride = ds.tokens * ds.dim;
  out.reserve(kMagicLen + 8 + mbytes.size() + ds.size() * (stride * 4 + 4));
  out.append(kDataMagic, kMagicLen);
  append_u64_le(out, mbytes.size());
  out += mbytes;
  for (size_t i = 0; i < ds.size(); ++i) {
    const char* raw = reinterpret_cast<const char*>(ds.features[i].data.data());
    out.append(raw, stride * sizeof(float));
    const uint32_t label = ds.labels[i];
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((label >> (8 * b)) & 0xff));
  }
  return out;
}

Dataset parse_dataset(std::string_view bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kDataMagic, kMagicLen) != 0) {
    throw MagicError("not a VBPD dataset file (bad magic)");
  }
  if (bytes.size() < kMagicLen + 8) throw TruncatedError("dataset file truncated in header");
  const uint64_t mlen = read_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + kMagicLen);
  if (bytes.size() < kMagicLen + 8 + mlen) throw TruncatedError("dataset file truncated in manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(kMagicLen + 8, mlen));
  } catch (const json::exception& e) {
    throw ManifestError(std::string("dataset manifest is not valid JSON: ") + e.what());
  }

  Dataset ds;
  size_t samples = 0;
  try {
    samples = manifest.at("samples").get<size_t>();
    ds.tokens = manifest.at("tokens").get<size_t>();
    ds.dim = manifest.at("dim").get<size_t>();
    ds.classes = manifest.at("classes").get<size_t>();
  } catch (const json::exception& e) {
    throw ManifestError(std::string("bad dataset manifest: ") + e.what());
  }
  const size_t stride = ds.tokens * ds.dim;
  const size_t per_sample = stride * sizeof(float) + 4;
  size_t pos = kMagicLen + 8 + mlen;
  if (bytes.size() - pos != samples * per_sample) {
    throw TruncatedError("dataset payload size does not match manifest sample count");
  }
  ds.features.reserve(samples);
  ds.labels.reserve(samples);
  for (size_t i = 0; i < samples; ++i) {
    std::vector<float> data(stride);
    std::memcpy(data.data(), bytes.data() + pos, stride * sizeof(float));
    pos += stride * sizeof(float);
    uint32_t label = 0;
    for (int b = 0; b < 4; ++b) {
      label |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
    }
    pos += 4;
    ds.features.emplace_back(std::vector<size_t>{ds.tokens, ds.dim}, std::move(data));
    ds.labels.push_back(label);
  }
  ds.validate();
  return ds;
}

std::string save_dataset_file(const Dataset& ds, const std::string& path) {
  const std::string bytes = serialize_dataset(ds);
  write_file_atomic(path, bytes);
  return fingerprint_bytes(bytes);
}

LoadedDataset load_dataset_file(const std::string& path) {
  const std::string bytes = read_file(path);
  return {parse_dataset(bytes), fingerprint_bytes(bytes)};
}

}  // namespace vbp
