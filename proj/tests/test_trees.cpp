#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "boulevard/rng.hpp"
#include "boulevard/trees.hpp"

using namespace boulevard;

namespace {

Matrix matrix_from(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
  int i = 0;
  for (const auto& row : rows) {
    int j = 0;
    for (double v : row) m.at(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix uniform_matrix(int n, int d, std::uint64_t seed) {
  auto rng = make_rng(seed);
  Matrix m(n, d);
  for (double& v : m.values) v = uniform01(rng);
  return m;
}

bool same_structure(const TreeStructure& a, const TreeStructure& b) {
  if (a.dimension() != b.dimension() || a.leaf_count() != b.leaf_count()) return false;
  if (a.nodes().size() != b.nodes().size()) return false;
  for (std::size_t i = 0; i < a.nodes().size(); ++i) {
    const TreeNode &na = a.nodes()[i], &nb = b.nodes()[i];
    if (na.feature != nb.feature || na.threshold != nb.threshold || na.left != nb.left ||
        na.right != nb.right || na.leaf_id != nb.leaf_id)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("randomized structure trivial stops", "[trees]") {
  StructureConstraints cons;
  cons.min_leaf_samples = 1;

  auto rng = make_rng(7);
  const Matrix one = matrix_from({{0.3, 0.7}});
  const TreeStructure single = build_randomized_structure(one, cons, rng);
  CHECK(single.leaf_count() == 1);
  CHECK(single.leaf_cell(0).lower == std::vector<double>{0.0, 0.0});
  CHECK(single.leaf_cell(0).upper == std::vector<double>{1.0, 1.0});

  const Matrix x = uniform_matrix(20, 2, 3);
  cons.min_leaf_samples = 20;  // every split violates the floor
  const TreeStructure floor_bound = build_randomized_structure(x, cons, rng);
  CHECK(floor_bound.leaf_count() == 1);

  cons.min_leaf_samples = 21;
  CHECK_THROWS_AS(build_randomized_structure(x, cons, rng), std::invalid_argument);
}

TEST_CASE("randomized structure respects the leaf floor", "[trees]") {
  const Matrix x = uniform_matrix(100, 2, 11);
  StructureConstraints cons;
  cons.min_leaf_samples = 10;
  cons.max_depth = 8;
  auto rng = make_rng(5);
  const TreeStructure s = build_randomized_structure(x, cons, rng);
  CHECK(s.leaf_count() > 1);
  CHECK(min_leaf_sample_count(s, x) >= 10);
}

TEST_CASE("randomized structure never reads responses", "[trees]") {
  const Matrix x = uniform_matrix(60, 3, 21);
  StructureConstraints cons;
  cons.min_leaf_samples = 5;
  auto rng1 = make_rng(99);
  auto rng2 = make_rng(99);
  // the builder has no response argument at all; identical rng state must
  // reproduce the structure bit for bit
  const TreeStructure a = build_randomized_structure(x, cons, rng1);
  const TreeStructure b = build_randomized_structure(x, cons, rng2);
  CHECK(same_structure(a, b));
}

TEST_CASE("greedy structure splits where impurity vanishes", "[trees]") {
  const Matrix x = matrix_from({{0.1}, {0.2}, {0.8}, {0.9}});
  const std::vector<double> z = {1.0, 1.0, 5.0, 5.0};
  StructureConstraints cons;
  cons.min_leaf_samples = 2;

  // enumeration oracle over the 3 split positions
  double best_imp = 1e300;
  int best_pos = -1;
  for (int pos = 1; pos <= 3; ++pos) {
    double sl = 0, ql = 0, sr = 0, qr = 0;
    for (int i = 0; i < 4; ++i) {
      if (i < pos) {
        sl += z[i];
        ql += z[i] * z[i];
      } else {
        sr += z[i];
        qr += z[i] * z[i];
      }
    }
    const double imp = (ql - sl * sl / pos) + (qr - sr * sr / (4 - pos));
    if (imp < best_imp) {
      best_imp = imp;
      best_pos = pos;
    }
  }
  REQUIRE(best_pos == 2);
  REQUIRE(best_imp == 0.0);

  const TreeStructure s = build_greedy_structure(x, z, cons, full_subsample(4));
  REQUIRE(s.leaf_count() == 2);
  CHECK(s.nodes()[0].feature == 0);
  CHECK(s.nodes()[0].threshold == Catch::Approx(0.5));
  CHECK(s.leaf_of(std::vector<double>{0.15}) != s.leaf_of(std::vector<double>{0.85}));
  CHECK(s.leaf_of(std::vector<double>{0.1}) == s.leaf_of(std::vector<double>{0.2}));

  cons.min_leaf_samples = 3;  // the floor forbids every split
  const TreeStructure blocked = build_greedy_structure(x, z, cons, full_subsample(4));
  CHECK(blocked.leaf_count() == 1);
}

TEST_CASE("greedy structure on constant gradients is a single leaf", "[trees]") {
  const Matrix x = uniform_matrix(50, 2, 2);
  const std::vector<double> z(50, 0.0);
  StructureConstraints cons;
  cons.min_leaf_samples = 2;
  const TreeStructure s = build_greedy_structure(x, z, cons, full_subsample(50));
  CHECK(s.leaf_count() == 1);

  const std::vector<double> bad = {1.0, std::nan("")};
  const Matrix x2 = matrix_from({{0.1}, {0.9}});
  CHECK_THROWS_AS(build_greedy_structure(x2, bad, cons, full_subsample(2)),
                  std::invalid_argument);
}

TEST_CASE("honest leaf values follow the 0/0 rule", "[trees]") {
  const Matrix x = matrix_from({{0.1}, {0.2}, {0.9}});
  const TreeStructure single = single_leaf_structure(1);

  SECTION("single leaf, full subsample") {
    const FittedTree t = assign_leaf_values(single, std::vector<double>{1.0, 2.0, 3.0}, x,
                                            full_subsample(3));
    CHECK(t.leaf_values[0] == Catch::Approx(2.0));
  }
  SECTION("subsample misses the leaf entirely") {
    const Matrix x4 = matrix_from({{0.1}, {0.2}, {0.8}, {0.9}});
    const TreeStructure split = make_structure(1, split_spec(0, 0.5, leaf_spec(), leaf_spec()));
    Subsample w;
    w.indices = {2, 3};
    w.rate = 0.5;
    const FittedTree t =
        assign_leaf_values(split, std::vector<double>{5.0, 7.0, 1.0, 3.0}, x4, w);
    const int left = split.leaf_of(std::vector<double>{0.1});
    CHECK(t.leaf_values[left] == 0.0);  // 0/0 -> 0, exactly
    const int right = split.leaf_of(std::vector<double>{0.9});
    CHECK(t.leaf_values[right] == Catch::Approx(2.0));
  }
  SECTION("mean over subsample members only") {
    Subsample w;
    w.indices = {0, 2};
    w.rate = 2.0 / 3.0;
    const FittedTree t =
        assign_leaf_values(single, std::vector<double>{2.0, 100.0, 4.0}, x, w);
    CHECK(t.leaf_values[0] == Catch::Approx(3.0));
  }
}

TEST_CASE("leaf_of boundary convention", "[trees]") {
  const TreeStructure s = make_structure(2, split_spec(0, 0.5, leaf_spec(), leaf_spec()));
  const int left = s.leaf_of(std::vector<double>{0.25, 0.5});
  const int right = s.leaf_of(std::vector<double>{0.75, 0.5});
  CHECK(left != right);
  // a query exactly on the threshold lands in the right leaf
  CHECK(s.leaf_of(std::vector<double>{0.5, 0.5}) == right);
  CHECK(s.leaf_of(std::vector<double>{1.0, 1.0}) == right);
  CHECK_THROWS_AS(s.leaf_of(std::vector<double>{1.5, 0.0}), std::domain_error);
}

TEST_CASE("depth-3 structure maps corners to distinct leaves", "[trees]") {
  // split on x1, then x2, then x3, all at 0.5
  auto level3 = [] { return leaf_spec(); };
  auto level2 = [&] { return split_spec(2, 0.5, level3(), level3()); };
  auto level1 = [&] { return split_spec(1, 0.5, level2(), level2()); };
  const TreeStructure s = make_structure(3, split_spec(0, 0.5, level1(), level1()));
  REQUIRE(s.leaf_count() == 8);
  std::set<int> seen;
  for (int c = 0; c < 8; ++c) {
    const std::vector<double> corner = {c & 1 ? 0.9 : 0.1, c & 2 ? 0.9 : 0.1,
                                        c & 4 ? 0.9 : 0.1};
    seen.insert(s.leaf_of(corner));
  }
  CHECK(seen.size() == 8);
}

TEST_CASE("structure vectors are uniform, concentrated or empty", "[trees]") {
  const Matrix x = matrix_from({{0.1}, {0.2}, {0.8}, {0.9}});
  const TreeStructure single = single_leaf_structure(1);
  const StructureVector uniform =
      structure_vector(single, x, full_subsample(4), std::vector<double>{0.5});
  CHECK(uniform.indices.size() == 4);
  CHECK(uniform.weight == Catch::Approx(0.25));
  CHECK(uniform.sum() == 1.0);

  const TreeStructure split = make_structure(1, split_spec(0, 0.5, leaf_spec(), leaf_spec()));
  Subsample w;
  w.indices = {0, 2};
  w.rate = 0.5;
  const StructureVector concentrated =
      structure_vector(split, x, w, std::vector<double>{0.15});
  REQUIRE(concentrated.indices == std::vector<int>{0});
  CHECK(concentrated.weight == 1.0);

  Subsample right_only;
  right_only.indices = {2, 3};
  right_only.rate = 0.5;
  const StructureVector empty =
      structure_vector(split, x, right_only, std::vector<double>{0.15});
  CHECK(empty.indices.empty());
  CHECK(empty.sum() == 0.0);
}

TEST_CASE("predict_tree equals the structure-vector inner product", "[trees]") {
  const Matrix x = uniform_matrix(80, 3, 17);
  auto rng = make_rng(23);
  std::vector<double> z(80);
  for (double& v : z) v = uniform_real(rng, -2.0, 2.0);
  StructureConstraints cons;
  cons.min_leaf_samples = 4;
  const TreeStructure s = build_randomized_structure(x, cons, rng);
  const Subsample w = draw_subsample(80, 0.6, rng);
  const FittedTree tree = assign_leaf_values(s, z, x, w);

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> q = {uniform01(rng), uniform01(rng), uniform01(rng)};
    const StructureVector sv = structure_vector(s, x, w, q);
    CHECK(predict_tree(tree, q) == Catch::Approx(sv.dot(z)).margin(1e-12));
  }

  SECTION("trivial predictions") {
    const Matrix x3 = matrix_from({{0.1}, {0.5}, {0.9}});
    const FittedTree single = assign_leaf_values(single_leaf_structure(1),
                                                 std::vector<double>{1.0, 2.0, 3.0}, x3,
                                                 full_subsample(3));
    CHECK(predict_tree(single, std::vector<double>{0.0}) == Catch::Approx(2.0));
    CHECK(predict_tree(single, std::vector<double>{1.0}) == Catch::Approx(2.0));
    CHECK_THROWS_AS(predict_tree(single, std::vector<double>{1.5}), std::domain_error);
  }
}

TEST_CASE("leaves partition the unit cube", "[trees]") {
  const Matrix x = uniform_matrix(50, 3, 31);
  StructureConstraints cons;
  cons.min_leaf_samples = 2;
  cons.max_depth = 12;
  auto rng = make_rng(13);
  const TreeStructure s = build_randomized_structure(x, cons, rng);
  REQUIRE(s.leaf_count() > 2);

  CHECK(total_leaf_volume(s) == Catch::Approx(1.0).margin(1e-9));

  for (int trial = 0; trial < 10000; ++trial) {
    const std::vector<double> q = {uniform01(rng), uniform01(rng), uniform01(rng)};
    int containing = 0;
    for (int l = 0; l < s.leaf_count(); ++l)
      if (s.leaf_cell(l).contains(q)) ++containing;
    REQUIRE(containing == 1);
    REQUIRE(s.leaf_cell(s.leaf_of(q)).contains(q));
  }
}

TEST_CASE("honest leaf values are linear in the response", "[trees]") {
  const Matrix x = uniform_matrix(40, 2, 41);
  auto rng = make_rng(43);
  StructureConstraints cons;
  cons.min_leaf_samples = 3;
  const TreeStructure s = build_randomized_structure(x, cons, rng);
  const Subsample w = draw_subsample(40, 0.7, rng);
  std::vector<double> z1(40), z2(40), combo(40);
  for (int i = 0; i < 40; ++i) {
    z1[i] = uniform_real(rng, -1.0, 1.0);
    z2[i] = uniform_real(rng, -1.0, 1.0);
    combo[i] = 2.5 * z1[i] - 0.75 * z2[i];
  }
  const FittedTree t1 = assign_leaf_values(s, z1, x, w);
  const FittedTree t2 = assign_leaf_values(s, z2, x, w);
  const FittedTree tc = assign_leaf_values(s, combo, x, w);
  for (int l = 0; l < s.leaf_count(); ++l)
    CHECK(tc.leaf_values[l] ==
          Catch::Approx(2.5 * t1.leaf_values[l] - 0.75 * t2.leaf_values[l]).margin(1e-12));
}

TEST_CASE("constraints hold wherever the depth budget allows", "[trees]") {
  const Matrix x = uniform_matrix(2000, 2, 51);
  StructureConstraints cons;
  cons.min_leaf_samples = 2;
  cons.max_leaf_diameter = 0.5;
  cons.max_depth = 30;
  auto rng = make_rng(53);
  const TreeStructure s = build_randomized_structure(x, cons, rng);

  std::vector<int> counts(s.leaf_count(), 0);
  for (int i = 0; i < x.rows; ++i) counts[s.leaf_of(x.row(i))] += 1;
  const std::vector<int> depths = leaf_depths(s);
  for (int l = 0; l < s.leaf_count(); ++l) {
    const bool diameter_ok = s.leaf_cell(l).diameter() <= cons.max_leaf_diameter;
    const bool budget_exhausted =
        depths[l] >= cons.max_depth || counts[l] < 2 * cons.min_leaf_samples;
    CHECK((diameter_ok || budget_exhausted));
  }
}

TEST_CASE("subsample sizes and ordering", "[trees]") {
  auto rng = make_rng(61);
  const Subsample w = draw_subsample(100, 0.8, rng);
  CHECK(w.indices.size() == 80);
  CHECK(std::is_sorted(w.indices.begin(), w.indices.end()));
  CHECK(std::adjacent_find(w.indices.begin(), w.indices.end()) == w.indices.end());
  CHECK(w.indices.front() >= 0);
  CHECK(w.indices.back() < 100);

  const Subsample tiny = draw_subsample(10, 0.25, rng);
  CHECK(tiny.indices.size() == 3);  // round(2.5) rounds half away from zero
  CHECK_THROWS_AS(draw_subsample(10, 0.01, rng), std::invalid_argument);
}
