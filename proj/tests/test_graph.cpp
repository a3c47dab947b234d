#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "omni/market_graph.hpp"
#include "omni/rng.hpp"
#include "testutil.hpp"

using namespace omni::graph;
using omni::numerics::SplitMix64;
using omni::numerics::Tensor;

namespace {

GicsCode code(int sector, int group_digit, int industry_digit, int sub_digit) {
  const int group = sector * 100 + group_digit;
  const int industry = group * 100 + industry_digit;
  const int sub = industry * 100 + sub_digit;
  return GicsCode(45 == sector || true ? sector : sector, group, industry, sub);
}

SnapshotInputs two_stock_inputs() {
  SnapshotInputs in;
  in.date = 0;
  in.tickers = {"AAA", "BBB"};
  in.gics = {code(45, 10, 10, 10), code(45, 10, 10, 10)};  // same sub-industry
  in.holders.rows = {{{1, 0.5}}, {{2, 0.25}}};             // no common holders
  in.revenues = {30.0, 70.0};
  in.esg = {50.0, 70.0};
  in.stock_features = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  in.industry_features = Tensor::matrix(1, 2, {0.5, -0.5});
  in.prices = {100.0, 200.0};
  in.index_level = 1000.0;
  return in;
}

}  // namespace

TEST_CASE("gics codes validate prefix consistency") {
  CHECK_NOTHROW(GicsCode(45, 4510, 451010, 45101010));
  CHECK_THROWS(GicsCode(45, 4610, 451010, 45101010));  // group not under sector
  CHECK_THROWS(GicsCode(45, 4510, 452010, 45101010));  // industry not under group
  CHECK_THROWS(GicsCode(45, 4510, 451010, 45102010));  // sub not under industry
  CHECK_THROWS(GicsCode(5, 510, 51010, 5101010));      // wrong digit counts
}

TEST_CASE("sector_sim covers all lca depths") {
  const GicsCode a = code(45, 10, 10, 10);
  CHECK(sector_sim(a, code(45, 10, 10, 10)) == 1.0);   // same sub-industry
  CHECK(sector_sim(a, code(45, 10, 10, 20)) == 0.75);  // same industry
  CHECK(sector_sim(a, code(45, 10, 20, 10)) == 0.5);   // same industry group
  CHECK(sector_sim(a, code(45, 20, 10, 10)) == 0.25);  // same sector
  CHECK(sector_sim(a, code(60, 10, 10, 10)) == 0.0);   // nothing shared

  SplitMix64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const GicsCode x = code(45, 10 * (1 + (int)rng.next_below(3)),
                            10 * (1 + (int)rng.next_below(3)), 10 * (1 + (int)rng.next_below(3)));
    const GicsCode y = code(45, 10 * (1 + (int)rng.next_below(3)),
                            10 * (1 + (int)rng.next_below(3)), 10 * (1 + (int)rng.next_below(3)));
    const double s = sector_sim(x, y);
    CHECK(s == sector_sim(y, x));
    const bool allowed = s == 0.0 || s == 0.25 || s == 0.5 || s == 0.75 || s == 1.0;
    CHECK(allowed);
  }
}

TEST_CASE("shareholder_sim is a weighted jaccard") {
  HolderRow a = {{1, 0.5}, {2, 0.5}};
  CHECK(shareholder_sim(a, a) == 1.0);

  HolderRow b = {{3, 0.4}, {4, 0.1}};
  CHECK(shareholder_sim(a, b) == 0.0);

  // {A:0.5, B:0.5} vs {A:0.25, C:0.75} -> 0.25 / 1.75
  HolderRow c = {{1, 0.25}, {3, 0.75}};
  CHECK(shareholder_sim(a, c) == doctest::Approx(0.25 / 1.75).epsilon(1e-12));
  CHECK(shareholder_sim(c, a) == shareholder_sim(a, c));

  CHECK(shareholder_sim({}, {}) == 0.0);

  SplitMix64 rng(9);
  for (int t = 0; t < 50; ++t) {
    HolderRow x, y;
    for (int k = 0; k < 6; ++k) {
      if (rng.next_double() < 0.5) x[k] = rng.uniform(0.0, 1.0);
      if (rng.next_double() < 0.5) y[k] = rng.uniform(0.0, 1.0);
    }
    const double s = shareholder_sim(x, y);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    CHECK(s == shareholder_sim(y, x));
  }
}

TEST_CASE("market_shares normalizes and rejects bad input") {
  CHECK(market_shares({5.0}) == std::vector<double>{1.0});
  const std::vector<double> s = market_shares({30.0, 70.0});
  CHECK(s[0] == doctest::Approx(0.3));
  CHECK(s[1] == doctest::Approx(0.7));

  SplitMix64 rng(11);
  std::vector<double> rev(7);
  for (double& r : rev) r = rng.uniform(0.1, 10.0);
  double total = 0.0;
  for (double x : market_shares(rev)) total += x;
  CHECK(std::abs(total - 1.0) < 1e-12);

  CHECK_THROWS(market_shares({0.0, 0.0}));
  CHECK_THROWS(market_shares({1.0, -0.5}));
}

TEST_CASE("build_snapshot composes the documented edge channels") {
  const GraphSnapshot snap = build_snapshot(two_stock_inputs(), 40.0, 80.0);
  CHECK(snap.n_stocks == 2);
  CHECK(snap.adj_ss.at(0, 1));  // same sub-industry
  CHECK(snap.edge_ss.at3(0, 1, 0) == 1.0);
  CHECK(snap.edge_ss.at3(0, 1, 1) == 0.0);
  CHECK(snap.adj_si.at(0, 0));
  CHECK(snap.adj_si.at(1, 0));
  CHECK(snap.edge_si.at3(0, 0, 0) == doctest::Approx(0.3));
  CHECK(snap.edge_si.at3(1, 0, 0) == doctest::Approx(0.7));
  CHECK(snap.edge_si.at3(0, 0, 1) == doctest::Approx(0.25));  // (50-40)/40
  CHECK(snap.edge_si.at3(1, 0, 1) == doctest::Approx(0.75));
}

TEST_CASE("build_snapshot single stock universe") {
  SnapshotInputs in = two_stock_inputs();
  in.tickers = {"AAA"};
  in.gics = {in.gics[0]};
  in.holders.rows.resize(1);
  in.revenues = {30.0};
  in.esg = {50.0};
  in.stock_features = Tensor::matrix(1, 3, {1, 2, 3});
  in.prices = {100.0};
  const GraphSnapshot snap = build_snapshot(in, 40.0, 80.0);
  CHECK(snap.n_stocks == 1);
  CHECK_FALSE(snap.adj_ss.at(0, 0));
  CHECK(snap.adj_si.at(0, 0));
}

TEST_CASE("build_snapshot reports missing per-stock fields by name") {
  SnapshotInputs in = two_stock_inputs();
  in.esg[1] = std::nan("");
  try {
    build_snapshot(in, 40.0, 80.0);
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("BBB") != std::string::npos);
  }
}

TEST_CASE("build_snapshot attributes match per-pair scalar oracles") {
  SplitMix64 rng(13);
  const std::size_t n = 5;
  SnapshotInputs in;
  in.date = 3;
  for (std::size_t i = 0; i < n; ++i) {
    in.tickers.push_back("S" + std::to_string(i));
    in.gics.push_back(code(45, 10 * (1 + (int)rng.next_below(2)),
                           10 * (1 + (int)rng.next_below(2)), 10 * (1 + (int)rng.next_below(2))));
    HolderRow row;
    for (int k = 0; k < 5; ++k) {
      if (rng.next_double() < 0.5) row[k] = rng.uniform(0.01, 0.2);
    }
    in.holders.rows.push_back(row);
    in.revenues.push_back(rng.uniform(1.0, 10.0));
    in.esg.push_back(rng.uniform(30.0, 90.0));
    in.prices.push_back(rng.uniform(10.0, 300.0));
  }
  in.stock_features = omni::test::random_tensor({n, 4}, rng);
  in.industry_features = omni::test::random_tensor({1, 3}, rng);
  in.index_level = 1000.0;

  const GraphSnapshot snap = build_snapshot(in, 30.0, 90.0);
  const std::vector<double> shares = market_shares(in.revenues);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double sec = sector_sim(in.gics[i], in.gics[j]);
      const double sh = shareholder_sim(in.holders.rows[i], in.holders.rows[j]);
      CHECK(snap.edge_ss.at3(i, j, 0) == sec);
      CHECK(snap.edge_ss.at3(i, j, 1) == sh);
      CHECK(snap.adj_ss.at(i, j) == (sec > 0.0 || sh > 0.0));
    }
    CHECK(snap.edge_si.at3(i, 0, 0) == shares[i]);
    CHECK(snap.edge_si.at3(i, 0, 1) ==
          doctest::Approx(std::clamp((in.esg[i] - 30.0) / 60.0, 0.0, 1.0)));
  }
}

TEST_CASE("compile_metapath SS keeps edges and adds unit self-loops") {
  const GraphSnapshot snap = build_snapshot(two_stock_inputs(), 40.0, 80.0);
  const MetapathView view = compile_metapath(snap, Metapath::SS);
  CHECK(view.adjacency.at(0, 0));
  CHECK(view.adjacency.at(1, 1));
  CHECK(view.edge_features.at3(0, 0, 0) == 1.0);
  CHECK(view.edge_features.at3(0, 0, 1) == 1.0);
  CHECK(view.edge_features.at3(0, 1, 0) == snap.edge_ss.at3(0, 1, 0));
}

TEST_CASE("compile_metapath SIS on a shared industry is fully connected") {
  const GraphSnapshot snap = build_snapshot(two_stock_inputs(), 40.0, 80.0);
  const MetapathView view = compile_metapath(snap, Metapath::SIS);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(view.adjacency.at(i, j));
  // market shares 0.3 / 0.7 average to 0.5 along the path
  CHECK(view.edge_features.at3(0, 1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  // self-loop carries the node's own stock-industry attributes
  CHECK(view.edge_features.at3(0, 0, 0) == doctest::Approx(0.3));
  CHECK(view.edge_features.at3(1, 1, 0) == doctest::Approx(0.7));
}

TEST_CASE("compile_metapath SIS equals brute-force two-hop enumeration") {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.next_below(11);   // up to 12 stocks
    const std::size_t ni = 1 + rng.next_below(3);   // up to 3 industries
    GraphSnapshot snap;
    snap.n_stocks = n;
    snap.n_industries = ni;
    snap.adj_ss = AdjMatrix::falses(n, n);
    snap.adj_si = AdjMatrix::falses(n, ni);
    snap.edge_ss = Tensor::zeros({n, n, 2});
    snap.edge_si = Tensor::zeros({n, ni, 2});
    snap.stock_features = Tensor::zeros({n, 2});
    snap.industry_features = Tensor::zeros({ni, 2});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < ni; ++l) {
        const bool on = rng.next_double() < 0.5;
        snap.adj_si.set(i, l, on);
        if (on) {
          snap.edge_si.at3(i, l, 0) = rng.next_double();
          snap.edge_si.at3(i, l, 1) = rng.next_double();
        }
      }
    }
    const MetapathView view = compile_metapath(snap, Metapath::SIS);

    // explicit path walk S -> I -> S
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) {
          CHECK(view.adjacency.at(i, i));
          continue;
        }
        bool connected = false;
        for (std::size_t l = 0; l < ni; ++l) {
          if (snap.adj_si.at(i, l) && snap.adj_si.at(j, l)) connected = true;
        }
        CHECK(view.adjacency.at(i, j) == connected);
        if (!connected) {
          CHECK(view.edge_features.at3(i, j, 0) == 0.0);
          CHECK(view.edge_features.at3(i, j, 1) == 0.0);
        }
        CHECK(view.adjacency.at(i, j) == view.adjacency.at(j, i));
      }
    }
  }
}

TEST_CASE("graph diameter stays within two hops with the global node") {
  // two stocks with no stock-stock edge reach each other via the industry
  SnapshotInputs in = two_stock_inputs();
  in.gics = {code(45, 10, 10, 10), code(60, 10, 10, 10)};
  in.holders.rows = {{{1, 0.5}}, {{2, 0.25}}};
  const GraphSnapshot snap = build_snapshot(in, 40.0, 80.0);
  CHECK_FALSE(snap.adj_ss.at(0, 1));
  CHECK(graph_diameter_check(snap) == 2);

  SplitMix64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 10;
    SnapshotInputs rin;
    rin.date = trial;
    for (std::size_t i = 0; i < n; ++i) {
      rin.tickers.push_back("S" + std::to_string(i));
      rin.gics.push_back(rng.next_double() < 0.5 ? code(45, 10, 10, 10) : code(60, 10, 10, 10));
      HolderRow row;
      if (rng.next_double() < 0.5) row[(int)rng.next_below(4)] = rng.uniform(0.01, 0.2);
      rin.holders.rows.push_back(row);
      rin.revenues.push_back(rng.uniform(1.0, 5.0));
      rin.esg.push_back(rng.uniform(30.0, 90.0));
      rin.prices.push_back(100.0);
    }
    rin.stock_features = omni::test::random_tensor({n, 2}, rng);
    rin.industry_features = omni::test::random_tensor({1, 2}, rng);
    rin.index_level = 100.0;
    const GraphSnapshot snap2 = build_snapshot(rin, 30.0, 90.0);
    const int diameter = graph_diameter_check(snap2);
    CHECK(diameter <= 2);

    // Floyd-Warshall oracle over the combined graph
    const std::size_t m = n + 1;
    std::vector<std::vector<int>> dist(m, std::vector<int>(m, 1 << 20));
    for (std::size_t u = 0; u < m; ++u) dist[u][u] = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && snap2.adj_ss.at(i, j)) dist[i][j] = 1;
      }
      if (snap2.adj_si.at(i, 0)) dist[i][n] = dist[n][i] = 1;
    }
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
          dist[i][j] = std::min(dist[i][j], dist[i][k] + dist[k][j]);
    int expect = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) expect = std::max(expect, dist[i][j]);
    CHECK(diameter == expect);
  }
}

TEST_CASE("snapshot inputs survive a json round trip") {
  SnapshotInputs in = two_stock_inputs();
  const std::string text = snapshot_inputs_to_json(in);
  CHECK(text.find("\"schema\"") != std::string::npos);
  const SnapshotInputs back = snapshot_inputs_from_json(text);
  CHECK(back.date == in.date);
  CHECK(back.tickers == in.tickers);
  CHECK(back.gics[0] == in.gics[0]);
  CHECK(back.holders.rows == in.holders.rows);
  CHECK(back.revenues == in.revenues);
  CHECK(back.esg == in.esg);
  CHECK(back.stock_features == in.stock_features);
  CHECK(back.industry_features == in.industry_features);
  CHECK(back.prices == in.prices);
  CHECK(back.index_level == in.index_level);

  // round trip preserves bytes exactly
  CHECK(snapshot_inputs_to_json(back) == text);

  CHECK_THROWS(snapshot_inputs_from_json("{\"schema\":\"v2\"}"));
}
