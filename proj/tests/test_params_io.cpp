#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <fstream>

#include "stylediff/config.hpp"
#include "stylediff/io.hpp"
#include "stylediff/params.hpp"
#include "tempdir.hpp"

using namespace stylediff;
using testing::TempDir;

TEST_CASE("Adam drives x^2 to its minimum") {
  ParameterStore<double> store;
  Parameter<double>& x = store.add("x", Tensor<double>({1}, 3.0));
  Adam<double> adam(store, {0.01});
  for (int i = 0; i < 2000; ++i) {
    store.zero_grad();
    x.grad[0] = 2.0 * x.value[0];
    adam.step();
  }
  CHECK(std::abs(x.value[0]) < 1e-3);
  CHECK(adam.steps() == 2000);
}

TEST_CASE("Adam's first step moves each coordinate by about lr") {
  ParameterStore<double> store;
  Parameter<double>& p = store.add("p", Tensor<double>({2}, {1.0, -1.0}));
  Adam<double> adam(store, {0.1});
  store.zero_grad();
  p.grad[0] = 5.0;
  p.grad[1] = -0.01;
  adam.step();
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-0.9).epsilon(1e-4));
}

TEST_CASE("Adam skips non-trainable entries and demands gradients") {
  ParameterStore<float> store;
  store.add("stat", Tensor<float>({2}, 1.0f), false);
  store.add("w", Tensor<float>({2}, 1.0f));
  Adam<float> adam(store, {0.1});
  CHECK_THROWS_AS(adam.step(), std::logic_error);
  store.zero_grad();
  store.at("w").grad.fill(1.0f);
  adam.step();
  CHECK(store.at("stat").value == Tensor<float>({2}, 1.0f));
  CHECK(store.at("w").value[0] < 1.0f);
}

TEST_CASE("gradient clipping bounds the joint norm and reports the original") {
  ParameterStore<double> store;
  store.add("a", Tensor<double>({2}));
  store.add("b", Tensor<double>({1}));
  store.zero_grad();
  store.at("a").grad[0] = 3.0;
  store.at("a").grad[1] = 0.0;
  store.at("b").grad[0] = 4.0;
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(store.at("a").grad[0] == doctest::Approx(0.6));
  CHECK(store.at("b").grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(store, 10.0) == doctest::Approx(1.0));
  CHECK(store.at("b").grad[0] == doctest::Approx(0.8));
}

TEST_CASE("parameter store names are unique and restore checks shapes") {
  ParameterStore<float> store;
  store.add("enc/w", Tensor<float>({2, 2}, 1.0f));
  store.add("dec/w", Tensor<float>({3}, 2.0f));
  CHECK_THROWS_AS(store.add("enc/w", Tensor<float>({1})), std::invalid_argument);
  CHECK_THROWS_AS(store.at("missing"), std::out_of_range);
  CHECK(store.scalar_count() == 7);

  TensorMap enc = store.snapshot("enc/");
  CHECK(enc.size() == 1);
  enc["enc/w"].fill(5.0f);
  store.restore(enc, "enc/");
  CHECK(store.at("enc/w").value[3] == 5.0f);
  CHECK(store.at("dec/w").value[0] == 2.0f);

  TensorMap wrong = enc;
  wrong["enc/w"] = Tensor<float>({4}, 0.0f);
  CHECK_THROWS_AS(store.restore(wrong, "enc/"), std::runtime_error);
  CHECK_THROWS_AS(store.restore(TensorMap{}, "dec/"), std::runtime_error);

  const auto before = store_fingerprint(store);
  store.at("dec/w").value[1] = 2.5f;
  CHECK(store_fingerprint(store) != before);
  CHECK(store_fingerprint(store, "enc/") == store_fingerprint(store, "enc/"));
}

TEST_CASE("checkpoints round-trip byte for byte") {
  TempDir dir;
  TensorMap tensors;
  tensors["b/scalar"] = Tensor<float>({1}, {3.5f});
  tensors["a/matrix"] = Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6});
  tensors["c/kernel"] = Tensor<float>({2, 1, 2}, {-1, 0.25f, 1e-30f, 7});
  write_checkpoint(dir / "one.sdmk", tensors);
  const TensorMap loaded = read_checkpoint(dir / "one.sdmk");
  CHECK(loaded == tensors);
  write_checkpoint(dir / "two.sdmk", loaded);
  CHECK(testing::file_bytes(dir / "one.sdmk") == testing::file_bytes(dir / "two.sdmk"));
  CHECK(testing::file_bytes(dir / "one.sdmk").substr(0, 4) == "SDMK");
}

TEST_CASE("binary readers reject foreign, truncated and padded files") {
  TempDir dir;
  write_matrix(dir / "m.sdmo", Tensor<float>({2, 2}, {1, 2, 3, 4}));
  CHECK(read_matrix(dir / "m.sdmo") == Tensor<float>({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(read_checkpoint(dir / "m.sdmo"), std::runtime_error);

  const std::string bytes = testing::file_bytes(dir / "m.sdmo");
  std::ofstream(dir / "short.sdmo", std::ios::binary) << bytes.substr(0, bytes.size() - 1);
  CHECK_THROWS_AS(read_matrix(dir / "short.sdmo"), std::runtime_error);
  std::ofstream(dir / "long.sdmo", std::ios::binary) << bytes << 'x';
  CHECK_THROWS_AS(read_matrix(dir / "long.sdmo"), std::runtime_error);
  CHECK_THROWS_AS(read_matrix(dir / "absent.sdmo"), std::runtime_error);

  write_style_code(dir / "c.sdsc", {0.5f, -1.0f});
  CHECK(read_style_code(dir / "c.sdsc") == std::vector<float>{0.5f, -1.0f});
  CHECK_THROWS_AS(read_style_code(dir / "m.sdmo"), std::runtime_error);
}

TEST_CASE("format_real round-trips doubles") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456.789, 2.0 / 3.0}) {
    CHECK(std::stod(format_real(v)) == v);
  }
}

TEST_CASE("config files parse keys, comments and typed values") {
  const Config c = Config::parse("# comment\nalpha = 0.5\n  name = run one  \nsteps=12\nflag = true\n");
  CHECK(c.get_double("alpha", 0) == 0.5);
  CHECK(c.get_string("name", "") == "run one");
  CHECK(c.get_int("steps", 0) == 12);
  CHECK(c.get_uint("steps", 0) == 12);
  CHECK(c.get_bool("flag", false));
  CHECK(c.get_double("missing", 7.0) == 7.0);
  CHECK_THROWS(c.get_int("name", 0));
  CHECK_THROWS(Config::parse("no equals sign\n"));

  Config d = Config::parse("steps = 3\nextra = 1\n");
  Config merged = c;
  merged.merge(d);
  CHECK(merged.get_int("steps", 0) == 3);
  CHECK(Config::parse(merged.to_text()).values() == merged.values());
}

TEST_CASE("CSV writer emits the header once and keeps rows in order") {
  TempDir dir;
  {
    CsvWriter csv(dir / "t.csv", {"a", "b"});
    csv.row({"1", "2"});
  }
  CsvWriter again(dir / "t.csv", {"a", "b"}, true);
  again.row({"3", "4"});
  CHECK(testing::file_bytes(dir / "t.csv") == "a,b\n1,2\n3,4\n");
  CHECK_THROWS(again.row({"only one"}));
}
