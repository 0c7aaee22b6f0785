#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "support/oracles.hpp"
#include "unirep/common.hpp"
#include "unirep/nets.hpp"
#include "unirep/serialize.hpp"

using namespace unirep;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MultiDomainModel make_model(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "model-init");
  MultiDomainModel model;
  model.backbone = Backbone::init({4, 8, 3}, rng);
  model.heads.emplace("a", Head::init(3, 5, rng));
  model.heads.emplace("b", Head::init(3, 2, rng));
  model.adapters.emplace("a", Adapter::identity(3));
  model.adapters.emplace("b", Adapter::identity(3));
  return model;
}

}  // namespace

TEST_CASE("zero backbone maps everything to zero features") {
  Rng rng(1);
  Backbone net = Backbone::init({3, 4, 2}, rng);
  for (auto& w : net.weights)
    for (auto& v : w.raw_data()) v = 0.0;
  Tensor out = net.forward(Tensor::from_data({2, 3}, {1, -2, 3, 0.5, 4, -1}));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("one-layer identity backbone is the identity") {
  Rng rng(2);
  Backbone net = Backbone::init({3, 3}, rng);
  auto w = net.weights[0].raw_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  Tensor x = Tensor::from_data({2, 3}, {1, -2, 3, 0.5, 4, -1});
  Tensor out = net.forward(x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("two-layer forward matches a hand-rolled oracle") {
  Rng rng(3);
  Backbone net = Backbone::init({4, 5, 3}, rng);
  std::vector<double> x{0.3, -1.2, 0.8, 2.0, -0.4, 0.1, 1.5, -0.7};
  Tensor out = net.forward(Tensor::from_data({2, 4}, x));

  auto w1 = net.weights[0].data();
  auto w2 = net.weights[1].data();
  std::vector<double> h = oracle::matmul_ref(x, {w1.begin(), w1.end()}, 2, 4, 5);
  for (auto& v : h) v = v > 0 ? v : 0.0;  // biases are zero at init
  std::vector<double> expect = oracle::matmul_ref(h, {w2.begin(), w2.end()}, 2, 5, 3);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(out.data()[i] - expect[i]) < 1e-12);
}

TEST_CASE("backbone rejects wrong input width") {
  Rng rng(4);
  Backbone net = Backbone::init({4, 3}, rng);
  CHECK_THROWS_AS(net.forward(Tensor::zeros({2, 5})), Error);
}

TEST_CASE("identity adapter leaves features unchanged exactly") {
  Rng rng(5);
  Backbone net = Backbone::init({4, 6, 3}, rng);
  Tensor x = Tensor::from_data({3, 4}, {1, 2, 3, 4, -1, 0.5, 2, -3, 0.1, 0.2, 0.3, 0.4});
  Tensor feats = net.forward(x);
  Tensor adapted = Adapter::identity(3).apply(feats);
  for (std::size_t i = 0; i < feats.numel(); ++i) CHECK(adapted.data()[i] == feats.data()[i]);
}

TEST_CASE("zero adapter maps to zero") {
  Adapter zero = Adapter::identity(3);
  for (auto& v : zero.matrix.raw_data()) v = 0.0;
  Tensor out = zero.apply(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("adapter matches a direct matrix product oracle") {
  std::vector<double> m{0.5, -1, 2, 0.3, 0.7, -0.2, 1.5, 0, 1};
  std::vector<double> f{1, 2, 3, -1, 0.5, 2};
  Adapter a = Adapter::identity(3);
  std::copy(m.begin(), m.end(), a.matrix.raw_data().begin());
  Tensor out = a.apply(Tensor::from_data({2, 3}, f));
  std::vector<double> expect = oracle::matmul_ref(f, m, 2, 3, 3);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(out.data()[i] - expect[i]) < 1e-12);
  CHECK_THROWS_AS(a.apply(Tensor::zeros({2, 4})), Error);
}

TEST_CASE("adapter application commutes with batching") {
  Rng rng(6);
  Adapter a = Adapter::identity(4);
  for (auto& v : a.matrix.raw_data()) v = rng.normal();
  std::vector<double> b1(2 * 4), b2(3 * 4);
  for (auto& v : b1) v = rng.normal();
  for (auto& v : b2) v = rng.normal();
  std::vector<double> both = b1;
  both.insert(both.end(), b2.begin(), b2.end());

  Tensor joint = a.apply(Tensor::from_data({5, 4}, both));
  Tensor first = a.apply(Tensor::from_data({2, 4}, b1));
  Tensor second = a.apply(Tensor::from_data({3, 4}, b2));
  for (std::size_t i = 0; i < first.numel(); ++i) CHECK(joint.data()[i] == first.data()[i]);
  for (std::size_t i = 0; i < second.numel(); ++i)
    CHECK(joint.data()[first.numel() + i] == second.data()[i]);
}

TEST_CASE("model checkpoint round-trips bit-exactly") {
  oracle::TempDir tmp("ckpt");
  MultiDomainModel model = make_model(11);
  auto path = tmp.path() / "model.ckpt";
  save_model(model, path);
  MultiDomainModel loaded = load_model(path);

  CHECK(loaded.heads.size() == 2);
  CHECK(loaded.adapters.size() == 2);
  CHECK(loaded.backbone.widths == model.backbone.widths);
  for (std::size_t l = 0; l < model.backbone.weights.size(); ++l) {
    auto a = model.backbone.weights[l].data();
    auto b = loaded.backbone.weights[l].data();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }
  for (const auto& [domain, head] : model.heads) {
    auto a = head.weight.data();
    auto b = loaded.heads.at(domain).weight.data();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("teacher checkpoint round-trips and loads frozen") {
  oracle::TempDir tmp("teacher");
  Rng rng(13);
  SingleDomainModel teacher;
  teacher.domain = "domain0";
  teacher.backbone = Backbone::init({4, 6, 3}, rng);
  teacher.head = Head::init(3, 7, rng);
  auto path = tmp.path() / "t.ckpt";
  save_teacher(teacher, path);
  SingleDomainModel loaded = load_teacher(path);
  CHECK(loaded.domain == "domain0");
  CHECK(loaded.head.class_count() == 7);
  for (const auto& p : loaded.backbone.parameters()) CHECK_FALSE(p.requires_grad());
  auto a = teacher.head.weight.data();
  auto b = loaded.head.weight.data();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("wrong magic bytes raise a format error") {
  oracle::TempDir tmp("magic");
  auto path = tmp.path() / "bad.ckpt";
  save_model(make_model(17), path);
  std::string bytes = slurp(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
  try {
    load_model(path);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::bad_format);
  }
}

TEST_CASE("version mismatch and truncation are distinct errors") {
  oracle::TempDir tmp("vers");
  auto path = tmp.path() / "m.ckpt";
  save_model(make_model(19), path);
  std::string bytes = slurp(path);

  std::string version_bumped = bytes;
  version_bumped[4] = 9;
  std::ofstream(tmp.path() / "v.ckpt", std::ios::binary)
      .write(version_bumped.data(), version_bumped.size());
  try {
    load_model(tmp.path() / "v.ckpt");
    FAIL("expected version error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::bad_version);
  }

  std::string truncated = bytes.substr(0, bytes.size() - 9);
  std::ofstream(tmp.path() / "t.ckpt", std::ios::binary).write(truncated.data(), truncated.size());
  try {
    load_model(tmp.path() / "t.ckpt");
    FAIL("expected truncation error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::truncated);
  }
}

TEST_CASE("checkpoint bytes are stable for a fixed seed") {
  oracle::TempDir tmp("stable");
  save_model(make_model(23), tmp.path() / "a.ckpt");
  save_model(make_model(23), tmp.path() / "b.ckpt");
  CHECK(oracle::fnv1a(slurp(tmp.path() / "a.ckpt")) == oracle::fnv1a(slurp(tmp.path() / "b.ckpt")));
  save_model(make_model(24), tmp.path() / "c.ckpt");
  CHECK(oracle::fnv1a(slurp(tmp.path() / "a.ckpt")) != oracle::fnv1a(slurp(tmp.path() / "c.ckpt")));
}

TEST_CASE("mismatched head and adapter domains are rejected") {
  MultiDomainModel model = make_model(29);
  model.adapters.erase("b");
  CHECK_THROWS_AS(model.validate(), Error);
}
