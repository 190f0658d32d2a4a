#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "doctest.h"
#include "tdv3/checkpoint.hpp"

using namespace tdv3;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "tdv3_test_ckpt";
  std::filesystem::create_directories(dir);
  return dir;
}

ParameterStore random_store(std::uint64_t seed) {
  ParameterStore store;
  Rng rng(seed);
  Tensor a({3, 4}), b({1, 5}), c({2, 2, 3});
  for (double& v : a.data) v = rng.normal();
  for (double& v : b.data) v = rng.normal();
  for (double& v : c.data) v = rng.normal();
  store.add("wm.enc.W", a);
  store.add("wm.enc.b", b);
  store.add("actor.l0.W", c);
  return store;
}

}  // namespace

TEST_CASE("checkpoint roundtrip is bitwise lossless") {
  const auto dir = temp_dir();
  const auto path = (dir / "params.tdv3").string();

  ParameterStore store = random_store(11);
  checkpoint_save(store, path);
  const auto loaded = checkpoint_read(path);
  REQUIRE(loaded.size() == 3);
  for (const auto& [name, t] : store.entries()) {
    REQUIRE(loaded.count(name) == 1);
    CHECK(loaded.at(name).shape == t.shape);
    CHECK(loaded.at(name) == t);  // exact: parameters live on the float32 grid
  }

  // restore into a same-shape store with different values
  ParameterStore other = random_store(22);
  checkpoint_restore(other, loaded);
  for (const auto& [name, t] : store.entries()) CHECK(other.at(name) == t);
}

TEST_CASE("checkpoint format errors are explicit") {
  const auto dir = temp_dir();
  const auto path = (dir / "broken.tdv3").string();

  CHECK_THROWS_AS(checkpoint_read((dir / "nope.tdv3").string()), std::runtime_error);

  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_WITH_AS(checkpoint_read(path), doctest::Contains("magic"), std::runtime_error);

  {
    std::ofstream out(path, std::ios::binary);
    out << "TDV3";
    const unsigned char ver[4] = {9, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(ver), 4);
    const unsigned char cnt[4] = {0, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(cnt), 4);
  }
  CHECK_THROWS_WITH_AS(checkpoint_read(path), doctest::Contains("version"), std::runtime_error);

  // truncate a valid file mid-record
  const auto good = (dir / "good.tdv3").string();
  ParameterStore store = random_store(5);
  checkpoint_save(store, good);
  const auto size = std::filesystem::file_size(good);
  std::filesystem::resize_file(good, size - 7);
  CHECK_THROWS_WITH_AS(checkpoint_read(good), doctest::Contains("truncated"), std::runtime_error);

  std::filesystem::remove_all(dir);
}

TEST_CASE("restore reports the first offending tensor by name") {
  const auto dir = temp_dir();
  const auto path = (dir / "mismatch.tdv3").string();
  ParameterStore saved = random_store(7);
  checkpoint_save(saved, path);
  const auto loaded = checkpoint_read(path);

  // extra tensor in the store that the file lacks
  {
    ParameterStore store = random_store(8);
    store.add("wm.extra.W", Tensor::zeros({2, 2}));
    CHECK_THROWS_WITH_AS(checkpoint_restore(store, loaded), doctest::Contains("wm.extra.W"),
                         std::invalid_argument);
  }
  // tensor in the file that the store lacks
  {
    ParameterStore store;
    Rng rng(9);
    Tensor t({2, 2, 3});
    for (double& v : t.data) v = rng.normal();
    store.add("actor.l0.W", t);
    CHECK_THROWS_WITH_AS(checkpoint_restore(store, loaded), doctest::Contains("wm.enc.W"),
                         std::invalid_argument);
  }
  // same name, different shape
  {
    ParameterStore store = random_store(10);
    store.entries().at("wm.enc.W") = Tensor::zeros({4, 4});
    CHECK_THROWS_WITH_AS(checkpoint_restore(store, loaded), doctest::Contains("wm.enc.W"),
                         std::invalid_argument);
  }
  std::filesystem::remove_all(dir);
}
