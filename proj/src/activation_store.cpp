#include "sprobe/activation_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "sprobe/error.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr double kAttentionRowTolerance = 1e-4;

std::string file_stem_for(std::string_view id) {
  std::string out;
  for (unsigned char c : id) {
    const bool plain = std::isalnum(c) || c == '_' || c == '-' || c == '.' || c == '|';
    if (plain) {
      out.push_back(static_cast<char>(c));
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  return out;
}

std::vector<std::byte> to_le_bytes(std::span<const float> values) {
  std::vector<std::byte> out(values.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), values.data(), out.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::byte>((bits >> (8 * b)) & 0xff);
    }
  }
  return out;
}

std::vector<float> from_le_bytes(std::span<const std::byte> bytes) {
  std::vector<float> out(bytes.size() / sizeof(float));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), bytes.data(), out.size() * sizeof(float));
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::to_integer<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
      out[i] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

void write_bytes(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("write failed for " + path.string());
}

ojson tensor_entry(const fs::path& dir, const std::string& rel, std::span<const float> values) {
  const auto bytes = to_le_bytes(values);
  write_bytes(dir / rel, bytes);
  ojson j;
  j["file"] = rel;
  j["offset"] = 0;
  j["bytes"] = bytes.size();
  j["sha256"] = sha256_hex(bytes);
  return j;
}

std::vector<float> read_tensor(const fs::path& dir, const nlohmann::json& entry,
                               std::size_t expected_floats, const std::string& id,
                               const char* what) {
  const fs::path path = dir / entry.at("file").get<std::string>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(fmt::format("missing record: {} file for instance '{}' ({})", what, id, path.string()));
  const auto offset = entry.at("offset").get<std::uint64_t>();
  const auto declared = entry.at("bytes").get<std::uint64_t>();
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected_bytes = expected_floats * sizeof(float);
  if (declared != expected_bytes || offset + declared > file_size ||
      (offset == 0 && file_size != declared)) {
    throw BundleError(fmt::format(
        "shape mismatch: {} tensor of instance '{}' holds {} bytes, manifest shape needs {}", what, id,
        file_size - std::min(offset, file_size), expected_bytes));
  }
  std::vector<std::byte> bytes(declared);
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(declared));
  if (!in) throw BundleError(fmt::format("short read of {} tensor for instance '{}'", what, id));
  const std::string digest = sha256_hex(bytes);
  if (digest != entry.at("sha256").get<std::string>())
    throw BundleError(fmt::format("checksum mismatch: {} tensor of instance '{}'", what, id));
  return from_le_bytes(bytes);
}

}  // namespace

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::last_nonpad: return "last_nonpad";
    case Pooling::mean_nonpad: return "mean_nonpad";
    case Pooling::target_tokens: return "target_tokens";
  }
  return "?";
}

Pooling parse_pooling(std::string_view tag) {
  for (Pooling p : {Pooling::last_nonpad, Pooling::mean_nonpad, Pooling::target_tokens})
    if (to_string(p) == tag) return p;
  throw ParseError("unknown pooling strategy '" + std::string(tag) + "'");
}

const PromptActivations* ActivationBundle::find(std::string_view id) const {
  const auto it = records.find(std::string(id));
  return it == records.end() ? nullptr : &it->second;
}

const PromptActivations& ActivationBundle::at(std::string_view id) const {
  const auto* r = find(id);
  if (!r) throw BundleError("missing record: instance '" + std::string(id) + "'");
  return *r;
}

void ActivationBundle::add(PromptActivations rec) {
  const auto problems = check_record(rec, manifest);
  if (!problems.empty())
    throw BundleError("record '" + rec.instance_id + "' rejected: " + problems.front());
  std::string id = rec.instance_id;
  if (!records.emplace(std::move(id), std::move(rec)).second)
    throw BundleError("duplicate record for instance '" + rec.instance_id + "'");
}

std::vector<std::string> check_record(const PromptActivations& rec, const BundleManifest& m) {
  std::vector<std::string> out;
  const std::size_t t = rec.num_tokens();
  if (rec.pad_mask.size() != t)
    out.push_back(fmt::format("pad_mask has {} entries for {} tokens", rec.pad_mask.size(), t));
  if (rec.response_start > t)
    out.push_back(fmt::format("response_start {} exceeds T = {}", rec.response_start, t));
  if (rec.num_states != m.num_states || rec.dim != m.dim)
    out.push_back(fmt::format("hidden shape [{}, T, {}] does not match manifest [{}, T, {}]",
                              rec.num_states, rec.dim, m.num_states, m.dim));
  if (rec.hidden.size() != rec.num_states * t * rec.dim)
    out.push_back(fmt::format("hidden holds {} floats, shape needs {}", rec.hidden.size(),
                              rec.num_states * t * rec.dim));
  else if (!std::all_of(rec.hidden.begin(), rec.hidden.end(), [](float v) { return std::isfinite(v); }))
    out.push_back("hidden contains non-finite values");

  if (rec.has_attention()) {
    if (rec.attn_layers != m.attn_layers || rec.heads != m.heads) {
      out.push_back(fmt::format("attention shape [{}, {}] does not match manifest [{}, {}]",
                                rec.attn_layers, rec.heads, m.attn_layers, m.heads));
    } else if (rec.attention.size() != rec.attn_layers * rec.heads * t * t) {
      out.push_back("attention tensor size does not match [L_attn, H, T, T]");
    } else if (rec.pad_mask.size() == t) {
      for (std::size_t l = 0; l < rec.attn_layers && out.size() < 8; ++l)
        for (std::size_t h = 0; h < rec.heads; ++h)
          for (std::size_t q = 0; q < t; ++q) {
            double sum = 0.0;
            bool finite = true;
            for (std::size_t k = 0; k < t; ++k) {
              const float a = rec.attn(l, h, q, k);
              finite = finite && std::isfinite(a);
              if (rec.pad_mask[k]) sum += a;
            }
            if (!finite || std::abs(sum - 1.0) > kAttentionRowTolerance) {
              out.push_back(fmt::format("attention row (layer {}, head {}, query {}) sums to {} over non-pad keys",
                                        l, h, q, sum));
              goto next_layer;
            }
          }
    next_layer:;
    }
  }
  return out;
}

std::vector<std::string> check_bundle(const ActivationBundle& bundle) {
  std::vector<std::string> out;
  if (bundle.manifest.format_version != kBundleFormatVersion)
    out.push_back(fmt::format("unsupported format_version {}", bundle.manifest.format_version));
  for (const auto& [id, rec] : bundle.records) {
    if (rec.instance_id != id) out.push_back(fmt::format("record key '{}' holds instance '{}'", id, rec.instance_id));
    for (auto& p : check_record(rec, bundle.manifest)) out.push_back(id + ": " + p);
  }
  return out;
}

void write_bundle(const ActivationBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir / "activations");
  const bool any_attention = std::any_of(bundle.records.begin(), bundle.records.end(),
                                         [](const auto& kv) { return kv.second.has_attention(); });
  if (any_attention) fs::create_directories(dir / "attentions");

  const auto& m = bundle.manifest;
  ojson manifest;
  manifest["format_version"] = m.format_version;
  manifest["model_name"] = m.model_name;
  manifest["L_states"] = m.num_states;
  manifest["L_attn"] = m.attn_layers;
  manifest["H"] = m.heads;
  manifest["D"] = m.dim;
  manifest["metadata"] = ojson::parse(m.metadata.dump());
  ojson recs = ojson::array();
  for (const auto& [id, rec] : bundle.records) {
    const std::string stem = file_stem_for(id);
    ojson r;
    r["instance_id"] = id;
    r["T"] = rec.num_tokens();
    r["response_start"] = rec.response_start;
    r["tokens"] = rec.tokens;
    ojson mask = ojson::array();
    for (bool b : rec.pad_mask) mask.push_back(b ? 1 : 0);
    r["pad_mask"] = std::move(mask);
    r["generation_text"] = rec.generation_text;
    r["hidden"] = tensor_entry(dir, "activations/" + stem + ".bin", rec.hidden);
    r["attention"] = rec.has_attention() ? tensor_entry(dir, "attentions/" + stem + ".bin", rec.attention)
                                         : ojson(nullptr);
    recs.push_back(std::move(r));
  }
  manifest["records"] = std::move(recs);
  write_text_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

ActivationBundle read_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("bundle directory not found: " + dir.string());
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw UsageError("bundle has no manifest.json: " + dir.string());

  ActivationBundle bundle;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed bundle manifest: ") + e.what());
  }
  try {
    auto& m = bundle.manifest;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kBundleFormatVersion)
      throw BundleError(fmt::format("unsupported bundle format_version {}", m.format_version));
    m.model_name = j.at("model_name").get<std::string>();
    m.num_states = j.at("L_states").get<std::size_t>();
    m.attn_layers = j.at("L_attn").get<std::size_t>();
    m.heads = j.at("H").get<std::size_t>();
    m.dim = j.at("D").get<std::size_t>();
    if (j.contains("metadata")) m.metadata = j.at("metadata");

    for (const auto& r : j.at("records")) {
      PromptActivations rec;
      rec.instance_id = r.at("instance_id").get<std::string>();
      const auto t = r.at("T").get<std::size_t>();
      rec.tokens = r.at("tokens").get<std::vector<std::string>>();
      if (rec.tokens.size() != t)
        throw BundleError(fmt::format("shape mismatch: instance '{}' declares T = {} but lists {} tokens",
                                      rec.instance_id, t, rec.tokens.size()));
      for (const auto& b : r.at("pad_mask")) rec.pad_mask.push_back(b.get<int>() != 0);
      rec.response_start = r.at("response_start").get<std::size_t>();
      rec.generation_text = r.at("generation_text").get<std::string>();
      rec.num_states = m.num_states;
      rec.dim = m.dim;
      rec.hidden = read_tensor(dir, r.at("hidden"), m.num_states * t * m.dim, rec.instance_id, "hidden");
      const auto& att = r.at("attention");
      if (!att.is_null()) {
        rec.attn_layers = m.attn_layers;
        rec.heads = m.heads;
        rec.attention = read_tensor(dir, att, m.attn_layers * m.heads * t * t, rec.instance_id, "attention");
      }
      bundle.add(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed bundle manifest: ") + e.what());
  }
  return bundle;
}

std::vector<TokenSpan> find_target_spans(std::span<const std::string> tokens,
                                         std::span<const std::string> aliases) {
  // Normalize token by token so every byte of the joined text maps back to
  // exactly one token.
  std::string joined;
  std::vector<std::size_t> token_end;
  token_end.reserve(tokens.size());
  for (const auto& tok : tokens) {
    std::string piece = tok;
    for (std::string_view marker : {"▁", "Ġ"}) {
      for (auto pos = piece.find(marker); pos != std::string::npos; pos = piece.find(marker, pos + 1))
        piece.replace(pos, marker.size(), " ");
    }
    joined += normalize_text(piece);
    token_end.push_back(joined.size());
  }

  std::vector<TokenSpan> spans;
  for (const auto& alias : aliases) {
    const std::string a = normalize_text(alias);
    for (const auto& m : find_alias_occurrences(joined, a)) {
      // First token whose byte range reaches past m.begin.
      const auto first = std::upper_bound(token_end.begin(), token_end.end(), m.begin) - token_end.begin();
      const auto last = std::lower_bound(token_end.begin(), token_end.end(), m.end) - token_end.begin();
      spans.push_back({static_cast<std::size_t>(first), static_cast<std::size_t>(last) + 1});
    }
  }
  std::sort(spans.begin(), spans.end(),
            [](const TokenSpan& x, const TokenSpan& y) { return x.begin < y.begin || (x.begin == y.begin && x.end < y.end); });
  std::vector<TokenSpan> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.begin <= merged.back().end) {
      merged.back().end = std::max(merged.back().end, s.end);
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

PoolOutput pool(const PromptActivations& rec, Pooling strategy, std::size_t layer,
                std::span<const TokenSpan> target_spans) {
  if (layer >= rec.num_states)
    throw ValidationError(fmt::format("layer {} out of range [0, {}) for instance '{}'", layer,
                                      rec.num_states, rec.instance_id));
  const std::size_t t = rec.num_tokens();
  const auto last = std::find(rec.pad_mask.rbegin(), rec.pad_mask.rend(), true);
  if (last == rec.pad_mask.rend())
    throw ValidationError("instance '" + rec.instance_id + "' has no non-pad tokens");

  PoolOutput out;
  out.vector.assign(rec.dim, 0.0);
  auto mean_over = [&](auto&& include) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < t; ++i) {
      if (!rec.pad_mask[i] || !include(i)) continue;
      const auto row = rec.hidden_row(layer, i);
      for (std::size_t d = 0; d < rec.dim; ++d) out.vector[d] += row[d];
      ++n;
    }
    if (n > 0)
      for (auto& v : out.vector) v /= static_cast<double>(n);
    return n;
  };

  switch (strategy) {
    case Pooling::last_nonpad: {
      const std::size_t pos = static_cast<std::size_t>(rec.pad_mask.rend() - last) - 1;
      const auto row = rec.hidden_row(layer, pos);
      std::copy(row.begin(), row.end(), out.vector.begin());
      break;
    }
    case Pooling::mean_nonpad:
      mean_over([](std::size_t) { return true; });
      break;
    case Pooling::target_tokens: {
      auto inside = [&](std::size_t i) {
        return std::any_of(target_spans.begin(), target_spans.end(),
                           [i](const TokenSpan& s) { return i >= s.begin && i < s.end; });
      };
      if (mean_over(inside) == 0) {
        out.fallback = true;
        mean_over([](std::size_t) { return true; });
      }
      break;
    }
  }
  return out;
}

Exclusion exclusion_filter(const PromptActivations& rec, Condition condition,
                           std::span<const std::string> aliases) {
  if (condition != Condition::sup && condition != Condition::ind) return Exclusion::keep;
  return detect_leak(rec.generation_text, aliases) ? Exclusion::exclude : Exclusion::keep;
}

bool ExclusionSummary::is_excluded(std::string_view id) const {
  return std::binary_search(excluded_ids.begin(), excluded_ids.end(), id);
}

ExclusionSummary summarize_exclusions(const ActivationBundle& bundle, const ConceptLibrary& lib) {
  ExclusionSummary s;
  for (Condition c : kConditions) s.by_condition[c] = {};
  for (const auto& [id, rec] : bundle.records) {
    const auto key = parse_instance_id(id);
    if (!key) continue;
    const ConceptEntry& e = lib.at(key->concept_id);
    auto& counts = s.by_condition[key->condition];
    ++counts.total;
    if (exclusion_filter(rec, key->condition, e.aliases) == Exclusion::exclude) {
      ++counts.excluded;
      s.excluded_ids.push_back(id);
    } else {
      ++counts.retained;
    }
  }
  std::sort(s.excluded_ids.begin(), s.excluded_ids.end());
  return s;
}

}  // namespace sprobe
