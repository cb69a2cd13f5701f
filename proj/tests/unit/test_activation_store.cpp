#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sprobe/activation_store.hpp"
#include "sprobe/concept_library.hpp"
#include "sprobe/util.hpp"

using namespace sprobe;
namespace fs = std::filesystem;

namespace {

BundleManifest manifest(std::size_t L, std::size_t D, std::size_t La = 0, std::size_t H = 0) {
  BundleManifest m;
  m.model_name = "unit";
  m.num_states = L;
  m.dim = D;
  m.attn_layers = La;
  m.heads = H;
  return m;
}

PromptActivations record(const std::string& id, std::vector<std::string> tokens, std::size_t L, std::size_t D) {
  PromptActivations r;
  r.instance_id = id;
  r.pad_mask.assign(tokens.size(), true);
  r.tokens = std::move(tokens);
  r.num_states = L;
  r.dim = D;
  r.hidden.resize(L * r.tokens.size() * D);
  for (std::size_t i = 0; i < r.hidden.size(); ++i) r.hidden[i] = 0.25f * static_cast<float>(i) - 1.0f;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sprobe_test_" + name);
  fs::remove_all(dir);
  return dir;
}

nlohmann::json read_manifest(const fs::path& dir) { return nlohmann::json::parse(read_text_file(dir / "manifest.json")); }

}  // namespace

TEST_CASE("single record round-trips bit-exact") {
  ActivationBundle b;
  b.manifest = manifest(3, 2);
  auto rec = record("white_bear|0|sup", {"Do", " not", " mention", "<pad>"}, 3, 2);
  rec.pad_mask[3] = false;
  rec.response_start = 2;
  rec.hidden[5] = -0.0f;
  rec.hidden[7] = 1e-30f;
  rec.generation_text = "Snow.";
  b.add(rec);

  const auto dir = fresh_dir("roundtrip");
  write_bundle(b, dir);
  const auto back = read_bundle(dir);
  const auto& r = back.at("white_bear|0|sup");
  CHECK(r.tokens == rec.tokens);
  CHECK(r.pad_mask == rec.pad_mask);
  CHECK(r.response_start == 2);
  CHECK(r.generation_text == "Snow.");
  REQUIRE(r.hidden.size() == rec.hidden.size());
  CHECK(std::memcmp(r.hidden.data(), rec.hidden.data(), rec.hidden.size() * sizeof(float)) == 0);
  CHECK(back.manifest.num_states == 3);
  CHECK(back.manifest.dim == 2);
  fs::remove_all(dir);
}

TEST_CASE("declared D smaller than the tensor file") {
  ActivationBundle b;
  b.manifest = manifest(3, 3);
  b.add(record("a|0|abs", {"x", " y", " z", " w"}, 3, 3));
  const auto dir = fresh_dir("shape");
  write_bundle(b, dir);
  auto j = read_manifest(dir);
  j["D"] = 2;
  write_text_file(dir / "manifest.json", j.dump(1));
  try {
    read_bundle(dir);
    FAIL("expected a bundle error");
  } catch (const BundleError& e) {
    CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("flipped byte fails the checksum and names the instance") {
  ActivationBundle b;
  b.manifest = manifest(2, 2);
  b.add(record("white_bear|1|men", {"a", " b"}, 2, 2));
  const auto dir = fresh_dir("checksum");
  write_bundle(b, dir);
  const auto file = dir / read_manifest(dir)["records"][0]["hidden"]["file"].get<std::string>();
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(5);
    char c;
    f.read(&c, 1);
    c ^= 0x10;
    f.seekp(5);
    f.write(&c, 1);
  }
  try {
    read_bundle(dir);
    FAIL("expected a bundle error");
  } catch (const BundleError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("checksum") != std::string::npos);
    CHECK(msg.find("white_bear|1|men") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing bundle and missing tensor") {
  CHECK_THROWS_AS(read_bundle(fs::temp_directory_path() / "sprobe_no_such_bundle"), UsageError);

  ActivationBundle b;
  b.manifest = manifest(1, 1);
  b.add(record("a|0|abs", {"x"}, 1, 1));
  const auto dir = fresh_dir("missing");
  write_bundle(b, dir);
  fs::remove_all(dir / "activations");
  CHECK_THROWS_AS(read_bundle(dir), BundleError);
  fs::remove_all(dir);
}

TEST_CASE("record invariants") {
  const auto m = manifest(1, 1, 1, 1);
  auto r = record("a|0|abs", {"x", " y"}, 1, 1);
  CHECK(check_record(r, m).empty());
  r.hidden[0] = std::nanf("");
  CHECK_FALSE(check_record(r, m).empty());

  auto a = record("a|0|abs", {"x", " y"}, 1, 1);
  a.attn_layers = 1;
  a.heads = 1;
  a.attention = {1.0f, 0.0f, 0.5f, 0.5f};
  CHECK(check_record(a, m).empty());
  a.attention = {1.0f, 0.0f, 0.5f, 0.4f};
  CHECK_FALSE(check_record(a, m).empty());

  auto p = record("a|0|abs", {"x", " y"}, 1, 1);
  p.response_start = 3;
  CHECK_FALSE(check_record(p, m).empty());

  ActivationBundle b;
  b.manifest = manifest(1, 2);
  CHECK_THROWS_AS(b.add(record("a|0|abs", {"x"}, 1, 1)), BundleError);
}

TEST_CASE("pooling strategies") {
  auto r = record("a|0|abs", {"x", " y", "<pad>"}, 1, 2);
  r.pad_mask = {true, true, false};
  r.hidden = {1, 3, 3, 5, 100, 100};
  CHECK(pool(r, Pooling::mean_nonpad, 0).vector == std::vector<double>{2, 4});
  CHECK(pool(r, Pooling::last_nonpad, 0).vector == std::vector<double>{3, 5});

  const auto fallback = pool(r, Pooling::target_tokens, 0, {});
  CHECK(fallback.fallback);
  CHECK(fallback.vector == pool(r, Pooling::mean_nonpad, 0).vector);

  const TokenSpan first{0, 1};
  const auto target = pool(r, Pooling::target_tokens, 0, std::span<const TokenSpan>(&first, 1));
  CHECK_FALSE(target.fallback);
  CHECK(target.vector == std::vector<double>{1, 3});

  CHECK_THROWS_AS(pool(r, Pooling::mean_nonpad, 1), ValidationError);
  r.pad_mask = {false, false, false};
  CHECK_THROWS_AS(pool(r, Pooling::mean_nonpad, 0), ValidationError);
}

TEST_CASE("target spans over subword tokens") {
  const std::vector<std::string> aliases = {"white bear", "polar bear", "arctic bear"};
  const std::vector<std::string> toks = {"Do", "\xE2\x96\x81not", "\xE2\x96\x81mention", "\xE2\x96\x81white",
                                         "\xE2\x96\x81" "bear", "."};
  const auto spans = find_target_spans(toks, aliases);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == TokenSpan{3, 5});

  const std::vector<std::string> bpe = {"Snow", "\xC4\xA0" "drifted", "\xC4\xA0" "across", "\xC4\xA0the",
                                        "\xC4\xA0" "empty", "\xC4\xA0ice", "\xC4\xA0" "field", "."};
  CHECK(find_target_spans(bpe, aliases).empty());

  const std::vector<std::string> split = {"The", " po", "lar", " be", "ars", " slept"};
  const auto s2 = find_target_spans(split, aliases);
  REQUIRE(s2.size() == 1);
  CHECK(s2[0] == TokenSpan{1, 5});
}

TEST_CASE("exclusion filter gates on condition") {
  const std::vector<std::string> aliases = {"white bear", "polar bear", "arctic bear"};
  PromptActivations r;
  r.generation_text = "A polar bear stood near the ice shelf.";
  CHECK(exclusion_filter(r, Condition::sup, aliases) == Exclusion::exclude);
  CHECK(exclusion_filter(r, Condition::ind, aliases) == Exclusion::exclude);
  CHECK(exclusion_filter(r, Condition::abs, aliases) == Exclusion::keep);
  CHECK(exclusion_filter(r, Condition::men, aliases) == Exclusion::keep);
  r.generation_text = "The seal rested beside the frozen shoreline.";
  CHECK(exclusion_filter(r, Condition::sup, aliases) == Exclusion::keep);
}
