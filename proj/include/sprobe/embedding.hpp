#pragma once

// Text embeddings for semantic-similarity analysis.
//
// fallback_embed: the normalized text is padded with one space on each side,
// every character trigram (over code points) is hashed with FNV-1a into 512
// bins, counts are used as weights and the vector is L2-normalized.
//
// Embedding file directory (written by external extractors):
//   manifest.json  {"format_version": 1, "model": "...", "dim": D,
//                   "entries": [{"key": "...", "index": i, "flagged": false}, ...]}
//   vectors.bin    float32 LE, row i = entry with index i
// Keys are prompt instance ids, "{concept}|alias|{i}" for aliases and
// "{concept}|pos|{i}" for positive texts.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sprobe {

inline constexpr std::size_t kFallbackDim = 512;
inline constexpr int kEmbeddingFormatVersion = 1;

struct Embedding {
  std::vector<float> v;
  bool flagged = false;  // empty text: zero vector
};

Embedding fallback_embed(std::string_view text);

// 0 when either vector is zero.
double cosine(std::span<const float> a, std::span<const float> b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  // key identifies the text for file-backed providers; text is used by
  // computing providers.
  virtual Embedding embed(std::string_view key, std::string_view text) const = 0;
  virtual std::string provenance() const = 0;
};

class FallbackEmbedder : public Embedder {
 public:
  Embedding embed(std::string_view key, std::string_view text) const override;
  std::string provenance() const override;
};

class FileEmbedder : public Embedder {
 public:
  explicit FileEmbedder(const std::filesystem::path& dir);
  // Throws Error when the key has no stored vector.
  Embedding embed(std::string_view key, std::string_view text) const override;
  std::string provenance() const override;

 private:
  std::string model_;
  std::string checksum_;
  std::map<std::string, Embedding, std::less<>> vectors_;
};

// "fallback" or "file:<dir>". Throws UsageError otherwise.
std::unique_ptr<Embedder> make_embedder(std::string_view spec);

void write_embedding_file(const std::filesystem::path& dir, std::string_view model,
                          const std::map<std::string, Embedding>& vectors);

}  // namespace sprobe
