#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni::graph {

using numerics::Tensor;

enum class NodeKind { Stock, Industry };

struct NodeRef {
  NodeKind kind = NodeKind::Stock;
  std::size_t index = 0;
};

// GICS-style hierarchical classification: 2-digit sector, 4-digit industry
// group, 6-digit industry, 8-digit sub-industry. Deeper codes embed their
// parents, which keeps the four levels prefix-consistent by construction.
class GicsCode {
 public:
  GicsCode(int sector, int industry_group, int industry, int sub_industry);

  int sector() const { return sector_; }
  int industry_group() const { return industry_group_; }
  int industry() const { return industry_; }
  int sub_industry() const { return sub_industry_; }

  // Depth of the lowest common ancestor on the classification tree, 0..4.
  static int lca_depth(const GicsCode& a, const GicsCode& b);

  bool operator==(const GicsCode& other) const = default;

 private:
  int sector_, industry_group_, industry_, sub_industry_;
};

// sector similarity = lca_depth / 4
double sector_sim(const GicsCode& a, const GicsCode& b);

// holder id -> position weight (fraction of portfolio value, >= 0)
using HolderRow = std::map<int, double>;

struct HolderTable {
  std::vector<HolderRow> rows;  // one per stock
};

// Weighted-Jaccard overlap of two holder maps, in [0,1].
double shareholder_sim(const HolderRow& a, const HolderRow& b);

// Revenue shares over an industry; throws on negative or all-zero input.
std::vector<double> market_shares(const std::vector<double>& revenues);

// Row-major boolean matrix.
struct AdjMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> v;

  static AdjMatrix falses(std::size_t r, std::size_t c) {
    return AdjMatrix{r, c, std::vector<std::uint8_t>(r * c, 0)};
  }
  bool at(std::size_t i, std::size_t j) const { return v[i * cols + j] != 0; }
  void set(std::size_t i, std::size_t j, bool b) { v[i * cols + j] = b ? 1 : 0; }
  bool operator==(const AdjMatrix&) const = default;
};

// Raw per-day inputs, the unit of snapshot serialization (schema "v1").
struct SnapshotInputs {
  int date = 0;
  std::vector<std::string> tickers;
  std::vector<GicsCode> gics;
  HolderTable holders;
  std::vector<double> revenues;  // NaN marks a missing value
  std::vector<double> esg;       // NaN marks a missing value
  Tensor stock_features;         // N x F raw feature rows
  Tensor industry_features;      // I x F_I
  std::vector<double> prices;    // per stock close
  double index_level = 0.0;      // benchmark index close
};

// One trading day's heterogeneous graph.
struct GraphSnapshot {
  int date = 0;
  std::size_t n_stocks = 0;
  std::size_t n_industries = 1;
  Tensor stock_features;     // N x F
  Tensor industry_features;  // I x F_I
  AdjMatrix adj_ss;          // N x N, symmetric, false diagonal
  AdjMatrix adj_si;          // N x I
  Tensor edge_ss;            // N x N x 2: (SectorSim, ShareholderSim)
  Tensor edge_si;            // N x I x 2: (MarketShare, scaled governance)
};

// Builds the day graph from raw inputs. The governance channel is min-max
// scaled with bounds fitted on the enclosing training window.
GraphSnapshot build_snapshot(const SnapshotInputs& in, double esg_lo, double esg_hi);

enum class Metapath { SS, SIS };

std::string metapath_name(Metapath p);

// Stock-to-stock view induced by one metapath: adjacency with self-loops
// plus per-pair 2-channel edge features.
struct MetapathView {
  Metapath path = Metapath::SS;
  AdjMatrix adjacency;   // N x N, symmetric, true diagonal
  Tensor edge_features;  // N x N x 2, zero where adjacency is false
};

MetapathView compile_metapath(const GraphSnapshot& snapshot, Metapath path);

// Longest shortest path between stock pairs over the combined SS+SI graph.
int graph_diameter_check(const GraphSnapshot& snapshot);

// JSON serialization of the raw day inputs (schema version "v1").
std::string snapshot_inputs_to_json(const SnapshotInputs& in);
SnapshotInputs snapshot_inputs_from_json(const std::string& text);

}  // namespace omni::graph
