#include "sprobe/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "sprobe/error.hpp"
#include "sprobe/rng.hpp"
#include "sprobe/text_match.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

namespace {

// Splits valid UTF-8 into code-point substrings.
std::vector<std::string_view> code_points(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

Embedding fallback_embed(std::string_view text) {
  Embedding e;
  e.v.assign(kFallbackDim, 0.0f);
  const std::string norm = normalize_text(text);
  if (norm.find_first_not_of(" \t\r\n\f\v") == std::string::npos) {
    e.flagged = true;
    return e;
  }
  const std::string padded = " " + norm + " ";
  const auto cps = code_points(padded);
  std::vector<double> counts(kFallbackDim, 0.0);
  for (std::size_t i = 0; i + 2 < cps.size(); ++i) {
    std::string tri;
    tri.append(cps[i]).append(cps[i + 1]).append(cps[i + 2]);
    counts[fnv1a64(tri) % kFallbackDim] += 1.0;
  }
  double norm2 = 0.0;
  for (double c : counts) norm2 += c * c;
  const double inv = 1.0 / std::sqrt(norm2);
  for (std::size_t i = 0; i < kFallbackDim; ++i) e.v[i] = static_cast<float>(counts[i] * inv);
  return e;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(fmt::format("cosine of vectors with lengths {} and {}", a.size(), b.size()));
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

Embedding FallbackEmbedder::embed(std::string_view, std::string_view text) const { return fallback_embed(text); }

std::string FallbackEmbedder::provenance() const {
  return fmt::format("fallback:trigram-fnv1a-{}", kFallbackDim);
}

FileEmbedder::FileEmbedder(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto vectors_path = dir / "vectors.bin";
  if (!std::filesystem::exists(manifest_path) || !std::filesystem::exists(vectors_path))
    throw UsageError("embedding directory needs manifest.json and vectors.bin: " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed embedding manifest: ") + e.what());
  }
  std::ifstream in(vectors_path, std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    if (j.at("format_version").get<int>() != kEmbeddingFormatVersion)
      throw ParseError("unsupported embedding format_version");
    model_ = j.at("model").get<std::string>();
    const auto dim = j.at("dim").get<std::size_t>();
    for (const auto& entry : j.at("entries")) {
      const auto idx = entry.at("index").get<std::size_t>();
      const std::size_t offset = idx * dim * sizeof(float);
      if (offset + dim * sizeof(float) > raw.size())
        throw ParseError(fmt::format("embedding row {} lies outside vectors.bin", idx));
      Embedding e;
      e.v.resize(dim);
      std::memcpy(e.v.data(), raw.data() + offset, dim * sizeof(float));
      e.flagged = entry.value("flagged", false);
      vectors_.emplace(entry.at("key").get<std::string>(), std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed embedding manifest: ") + e.what());
  }
  checksum_ = sha256_file(vectors_path);
}

Embedding FileEmbedder::embed(std::string_view key, std::string_view) const {
  const auto it = vectors_.find(key);
  if (it == vectors_.end()) throw Error("embedder failure: no stored vector for '" + std::string(key) + "'");
  return it->second;
}

std::string FileEmbedder::provenance() const { return fmt::format("file:{}:sha256={}", model_, checksum_); }

std::unique_ptr<Embedder> make_embedder(std::string_view spec) {
  if (spec == "fallback") return std::make_unique<FallbackEmbedder>();
  if (spec.substr(0, 5) == "file:") return std::make_unique<FileEmbedder>(std::filesystem::path(std::string(spec.substr(5))));
  throw UsageError("--embedder must be 'fallback' or 'file:<path>', got '" + std::string(spec) + "'");
}

void write_embedding_file(const std::filesystem::path& dir, std::string_view model,
                          const std::map<std::string, Embedding>& vectors) {
  std::filesystem::create_directories(dir);
  std::size_t dim = vectors.empty() ? 0 : vectors.begin()->second.v.size();
  nlohmann::ordered_json j;
  j["format_version"] = kEmbeddingFormatVersion;
  j["model"] = model;
  j["dim"] = dim;
  j["entries"] = nlohmann::ordered_json::array();
  std::ofstream out(dir / "vectors.bin", std::ios::binary | std::ios::trunc);
  std::size_t idx = 0;
  for (const auto& [key, e] : vectors) {
    if (e.v.size() != dim) throw ValidationError("embedding vectors differ in dimension");
    out.write(reinterpret_cast<const char*>(e.v.data()), static_cast<std::streamsize>(dim * sizeof(float)));
    j["entries"].push_back({{"key", key}, {"index", idx++}, {"flagged", e.flagged}});
  }
  if (!out) throw UsageError("cannot write " + (dir / "vectors.bin").string());
  write_text_file(dir / "manifest.json", j.dump(1) + "\n");
}

}  // namespace sprobe
