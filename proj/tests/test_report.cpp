#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sevuln/errors.hpp"
#include "sevuln/report.hpp"
#include "support.hpp"

using namespace sevuln;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sevuln_test_" + name + "_" +
                                                  std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

ScoreTable small_table() {
  ScoreTable t;
  ScoreRow r;
  r.index = 0;
  r.id = "Qinj_3";
  r.kind = "Qinj";
  r.location = "3";
  r.raw_djdz = 0.1;
  r.raw_colnorm = 2.5;
  r.s_score = 0.25;
  r.l_score = 1.0;
  r.v_score = 0.775;
  r.rank = 1;
  t.rows.push_back(r);
  return t;
}

}  // namespace

TEST_CASE("FNV-1a reference vectors") {
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
  CHECK(hex64(fnv1a64("foobar")) == "85944171f73967e8");
}

TEST_CASE("doubles are written in shortest round-trip form") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345.678, 0.0}) {
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("scores CSV layout") {
  const std::string csv = scores_csv(small_table(), "abc");
  CHECK(csv ==
        "# manifest abc\n"
        "# stealth input: residual\n"
        "measurement_id,kind,location,raw_dJdz,raw_colnorm,s_score,l_score,v_score,rank\n"
        "Qinj_3,Qinj,3,0.1,2.5,0.25,1,0.775,1\n");
  const auto j = scores_json(small_table());
  CHECK(j["rows"][0]["measurement_id"] == "Qinj_3");
  CHECK(j["stealth_input"] == "residual");
}

TEST_CASE("matrix CSV checks its labels") {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  CHECK(matrix_csv(m, {"a", "b"}, {"x", "y"}, "id") == "# manifest id\nrow,x,y\na,1,0\nb,0,1\n");
  CHECK_THROWS_AS(matrix_csv(m, {"a"}, {"x", "y"}, "id"), ShapeError);
}

TEST_CASE("manifest id ignores the timestamp") {
  RunManifest a;
  a.command = "assess";
  a.case_hash = "1";
  a.meas_hash = "2";
  a.params["seed"] = 1;
  RunManifest b = a;
  a.timestamp = "2020-01-01T00:00:00Z";
  b.timestamp = "2030-01-01T00:00:00Z";
  CHECK(a.id() == b.id());
  b.params["seed"] = 2;
  CHECK(a.id() != b.id());
  const auto j = a.to_json({{"scores.csv", "ff"}});
  CHECK(j["manifest_id"] == a.id());
  CHECK(j["outputs"]["scores.csv"] == "ff");
}

TEST_CASE("output bundle writes every file and returns hashes") {
  const fs::path dir = fresh_dir("bundle");
  OutputBundle bundle;
  bundle.add("a.txt", "hello");
  bundle.add("sub/b.txt", "world");
  const auto hashes = bundle.write(dir.string());
  CHECK(hashes.at("a.txt") == hex64(fnv1a64("hello")));
  CHECK(read_file((dir / "sub" / "b.txt").string()) == "world");
  CHECK_THROWS_AS(read_file((dir / "missing").string()), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("sensitivity cache round trip") {
  const fs::path dir = fresh_dir("cache");
  const SensitivityCache cache(dir.string(), "c", "m", "p");
  CHECK_FALSE(cache.get(1.0, 1).has_value());

  ConditionSensitivities v;
  v.dx_dz = Eigen::MatrixXd::Random(3, 4);
  v.dj_dz = Eigen::VectorXd::Random(4);
  v.j_star = 2.75;
  v.table = small_table();
  v.table.input = StealthInput::kSurrogate;
  cache.put(1.0, 1, v);

  const auto got = cache.get(1.0, 1);
  REQUIRE(got.has_value());
  CHECK(got->dx_dz == v.dx_dz);
  CHECK(got->dj_dz == v.dj_dz);
  CHECK(got->j_star == 2.75);
  CHECK(got->table.input == StealthInput::kSurrogate);
  REQUIRE(got->table.rows.size() == 1);
  CHECK(got->table.rows[0].id == "Qinj_3");
  CHECK(got->table.rows[0].v_score == 0.775);

  CHECK_FALSE(cache.get(1.0, 2).has_value());
  CHECK_FALSE(SensitivityCache(dir.string(), "c", "m", "q").get(1.0, 1).has_value());

  {
    std::ofstream f(cache.path_for(1.0, 1), std::ios::binary | std::ios::trunc);
    f << "SVC1garbage";
  }
  CHECK_FALSE(cache.get(1.0, 1).has_value());
  fs::remove_all(dir);
}
