#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mhtn/errors.hpp"
#include "mhtn/retrieval.hpp"
#include "mhtn/rng.hpp"
#include "oracles.hpp"

using namespace mhtn;

TEST_CASE("cosine similarity basics") {
  Vector a(2), b(2);
  a << 3, 0;
  b << 0, 5;
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));

  Vector zero = Vector::Zero(2);
  CHECK(cosine_similarity(a, zero) == 0.0);

  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    Vector x(5), y(5);
    for (int j = 0; j < 5; ++j) {
      x[j] = rng.uniform(-2, 2);
      y[j] = rng.uniform(-2, 2);
    }
    double direct = x.dot(y) / (x.norm() * y.norm());
    CHECK(std::abs(cosine_similarity(x, y) - direct) < 1e-12);
    CHECK(cosine_similarity(x, y) <= 1.0 + 1e-12);
    CHECK(cosine_similarity(x, y) >= -1.0 - 1e-12);
  }
}

TEST_CASE("average precision frozen values") {
  CHECK(average_precision({1, 1, 1, 1}, 4) == doctest::Approx(1.0));
  CHECK(average_precision({1, 0, 1}, 2) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  CHECK(average_precision({1, 0, 1}, 2) == doctest::Approx(0.833333).epsilon(1e-5));
  CHECK(average_precision({0, 1}, 1) == doctest::Approx(0.5));
  CHECK(average_precision({0, 0, 0}, 0) == 0.0);
  CHECK_THROWS_AS(average_precision({1, 1}, 1), UsageError);
}

TEST_CASE("average precision matches the literal loop on random lists") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 1 + rng.index(40);
    std::vector<int> rel(n);
    int r = 0;
    for (auto& v : rel) {
      v = rng.uniform() < 0.3 ? 1 : 0;
      r += v;
    }
    CHECK(average_precision(rel, r) == oracle::ap_literal(rel, r));
  }
}

namespace {

EmbeddedModality make_set(const std::string& tag, const Matrix& rows,
                          std::vector<int> labels) {
  EmbeddedModality em;
  em.modality = tag;
  em.rows = rows;
  em.labels = std::move(labels);
  for (long long i = 0; i < rows.rows(); ++i) em.ids.push_back(i);
  return em;
}

}  // namespace

TEST_CASE("evaluate_task: everything relevant gives MAP 1") {
  Rng rng(5);
  Matrix q = oracle::random_matrix(4, 3, rng), g = oracle::random_matrix(6, 3, rng);
  TaskResult res = evaluate_task(make_set("image", q, {0, 0, 0, 0}),
                                 make_set("text", g, {0, 0, 0, 0, 0, 0}));
  CHECK(res.map == doctest::Approx(1.0));
  CHECK(res.num_queries == 4);
  for (double p : res.pr.precision) CHECK(p == doctest::Approx(1.0));
}

TEST_CASE("evaluate_task: handcrafted 2-class set matches hand-computed ranking") {
  // gallery: two class-0 rows near +x, two class-1 rows near +y
  Matrix g(4, 2);
  g << 1.0, 0.0, 0.9, 0.1, 0.1, 0.9, 0.0, 1.0;
  Matrix q(2, 2);
  q << 1.0, 0.05,  // class 0 query: ranks g0, g1 first
      0.05, 1.0;   // class 1 query: ranks g3, g2 first
  TaskResult res =
      evaluate_task(make_set("image", q, {0, 1}), make_set("text", g, {0, 0, 1, 1}));
  // both queries retrieve their class at ranks 1 and 2: AP = 1
  CHECK(res.map == doctest::Approx(1.0));

  // flip one gallery label so the class-0 query sees ranks 1 and 3
  TaskResult worse =
      evaluate_task(make_set("image", q.topRows(1), {0}), make_set("text", g, {0, 1, 0, 1}));
  // ranking by cosine: g0, g1, g2, g3 -> relevant at ranks 1, 3
  CHECK(worse.map == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("evaluate_task: random embeddings score near chance") {
  Rng rng(11);
  int n = 240, c = 4;
  Matrix q(n, 6), g(n, 6);
  std::vector<int> ql, gl;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 6; ++j) {
      q(i, j) = rng.uniform();
      g(i, j) = rng.uniform();
    }
    ql.push_back(i % c);
    gl.push_back(i % c);
  }
  TaskResult res = evaluate_task(make_set("image", q, ql), make_set("text", g, gl));
  CHECK(std::abs(res.map - 1.0 / c) < 0.1);
}

TEST_CASE("evaluate_task: MAP invariant under monotone similarity transforms") {
  // Scaling all embeddings by a positive constant leaves cosine unchanged;
  // ranking only depends on order, so MAP must be identical.
  Rng rng(13);
  Matrix q = oracle::random_matrix(5, 4, rng).array() + 1.5;
  Matrix g = oracle::random_matrix(9, 4, rng).array() + 1.5;
  std::vector<int> ql = {0, 1, 2, 0, 1}, gl = {0, 1, 2, 0, 1, 2, 0, 1, 2};
  double base = evaluate_task(make_set("image", q, ql), make_set("text", g, gl)).map;
  double scaled = evaluate_task(make_set("image", Matrix(3.7 * q), ql),
                                make_set("text", g, gl))
                      .map;
  CHECK(base == doctest::Approx(scaled).epsilon(1e-12));
}

TEST_CASE("evaluate_task: ties break by ascending instance id") {
  Matrix q(1, 2);
  q << 1, 0;
  Matrix g(3, 2);
  g << 1, 0, 1, 0, 1, 0;  // all tied at similarity 1
  EmbeddedModality gallery = make_set("text", g, {1, 0, 1});
  gallery.ids = {30, 20, 10};  // id order: 10 (label 1), 20 (label 0), 30 (label 1)
  TaskResult res = evaluate_task(make_set("image", q, {1}), gallery);
  // ranking by id: 10, 20, 30 -> relevance 1, 0, 1 -> AP = (1 + 2/3) / 2
  CHECK(res.map == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("evaluate_all: task counts and average") {
  Rng rng(19);
  std::vector<EmbeddedModality> five;
  const char* tags[5] = {"image", "text", "audio", "video", "model3d"};
  for (int m = 0; m < 5; ++m)
    five.push_back(make_set(tags[m], oracle::random_matrix(6, 3, rng),
                            {0, 1, 2, 0, 1, 2}));
  TaskMatrix all = evaluate_all(five);
  CHECK(all.tasks.size() == 20);
  double mean = 0.0;
  for (const auto& t : all.tasks) mean += t.map;
  mean /= static_cast<double>(all.tasks.size());
  CHECK(all.average == doctest::Approx(mean).epsilon(1e-12));

  std::vector<EmbeddedModality> two(five.begin(), five.begin() + 2);
  CHECK(evaluate_all(two).tasks.size() == 2);
  std::vector<EmbeddedModality> one(five.begin(), five.begin() + 1);
  CHECK_THROWS_AS(evaluate_all(one), ConfigError);
}

TEST_CASE("pr curve has the 11 standard recall levels, precision from ranks") {
  Matrix q(1, 2);
  q << 1, 0;
  Matrix g(4, 2);
  g << 1, 0, 0.9, 0.1, 0.5, 0.5, 0.4, 0.6;
  // relevance down the ranking: 1, 0, 1, 0 with R = 2
  TaskResult res =
      evaluate_task(make_set("image", q, {0}), make_set("text", g, {0, 1, 0, 1}));
  for (int lv = 0; lv <= 10; ++lv)
    CHECK(res.pr.recall[static_cast<std::size_t>(lv)] == doctest::Approx(lv / 10.0));
  // recall 0.5 reached at rank 1 (precision 1); recall 1.0 at rank 3 (2/3)
  CHECK(res.pr.precision[0] == doctest::Approx(1.0));
  CHECK(res.pr.precision[5] == doctest::Approx(1.0));
  CHECK(res.pr.precision[10] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("results and pr files are written with stamps") {
  namespace fs = std::filesystem;
  Rng rng(23);
  std::vector<EmbeddedModality> sets = {
      make_set("image", oracle::random_matrix(4, 3, rng), {0, 1, 0, 1}),
      make_set("text", oracle::random_matrix(4, 3, rng), {0, 1, 0, 1})};
  TaskMatrix all = evaluate_all(sets);
  fs::path dir = fs::temp_directory_path() / "mhtn_retrieval_test";
  fs::create_directories(dir);
  write_results((dir / "results.tsv").string(), all, 42, 0xbeef);
  write_pr_curves(dir.string(), all, 42, 0xbeef);

  std::ifstream in(dir / "results.tsv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "# seed 42");
  std::getline(in, line);
  CHECK(line.find("# config") == 0);
  std::getline(in, line);
  CHECK(line == "query\tgallery\tmap\tqueries");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);  // two tasks + average
  CHECK(fs::exists(dir / "pr_image_to_text.tsv"));
  CHECK(fs::exists(dir / "pr_text_to_image.tsv"));
}
