#include "omni/market_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace omni::graph {

using nlohmann::json;

GicsCode::GicsCode(int sector, int industry_group, int industry, int sub_industry)
    : sector_(sector), industry_group_(industry_group), industry_(industry),
      sub_industry_(sub_industry) {
  const bool digits_ok = sector >= 10 && sector <= 99 && industry_group >= 1000 &&
                         industry_group <= 9999 && industry >= 100000 && industry <= 999999 &&
                         sub_industry >= 10000000 && sub_industry <= 99999999;
  const bool prefix_ok = industry_group / 100 == sector && industry / 100 == industry_group &&
                         sub_industry / 100 == industry;
  if (!digits_ok || !prefix_ok) {
    std::ostringstream os;
    os << "invalid GICS code (" << sector << ", " << industry_group << ", " << industry << ", "
       << sub_industry << "): levels must be 2/4/6/8 digits and prefix-consistent";
    throw std::invalid_argument(os.str());
  }
}

int GicsCode::lca_depth(const GicsCode& a, const GicsCode& b) {
  if (a.sector_ != b.sector_) return 0;
  if (a.industry_group_ != b.industry_group_) return 1;
  if (a.industry_ != b.industry_) return 2;
  if (a.sub_industry_ != b.sub_industry_) return 3;
  return 4;
}

double sector_sim(const GicsCode& a, const GicsCode& b) {
  return static_cast<double>(GicsCode::lca_depth(a, b)) / 4.0;
}

double shareholder_sim(const HolderRow& a, const HolderRow& b) {
  double num = 0.0, den = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ia != a.end() && (ib == b.end() || ia->first < ib->first)) {
      den += ia->second;
      ++ia;
    } else if (ib != b.end() && (ia == a.end() || ib->first < ia->first)) {
      den += ib->second;
      ++ib;
    } else {
      num += std::min(ia->second, ib->second);
      den += std::max(ia->second, ib->second);
      ++ia;
      ++ib;
    }
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

std::vector<double> market_shares(const std::vector<double>& revenues) {
  double total = 0.0;
  for (std::size_t i = 0; i < revenues.size(); ++i) {
    if (revenues[i] < 0.0) {
      throw std::invalid_argument("market_shares: negative revenue at stock " +
                                  std::to_string(i));
    }
    total += revenues[i];
  }
  if (total <= 0.0) {
    throw std::invalid_argument("market_shares: all revenues are zero");
  }
  std::vector<double> shares(revenues.size());
  for (std::size_t i = 0; i < revenues.size(); ++i) shares[i] = revenues[i] / total;
  return shares;
}

std::string metapath_name(Metapath p) { return p == Metapath::SS ? "SS" : "SIS"; }

GraphSnapshot build_snapshot(const SnapshotInputs& in, double esg_lo, double esg_hi) {
  const std::size_t n = in.gics.size();
  const std::size_t n_ind = in.industry_features.rows();
  if (in.holders.rows.size() != n || in.stock_features.rows() != n) {
    throw std::invalid_argument("build_snapshot: inconsistent universe sizes");
  }

  // missing scalar fields are reported per stock before any edges are built
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < n; ++i) {
    const bool rev_missing = i >= in.revenues.size() || !std::isfinite(in.revenues[i]);
    const bool esg_missing = i >= in.esg.size() || !std::isfinite(in.esg[i]);
    if (rev_missing || esg_missing) missing.push_back(i);
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "build_snapshot: missing revenue/ESG for stocks:";
    for (std::size_t i : missing) {
      os << " " << (i < in.tickers.size() ? in.tickers[i] : std::to_string(i));
    }
    throw std::invalid_argument(os.str());
  }

  GraphSnapshot snap;
  snap.date = in.date;
  snap.n_stocks = n;
  snap.n_industries = n_ind;
  snap.stock_features = in.stock_features;
  snap.industry_features = in.industry_features;
  snap.adj_ss = AdjMatrix::falses(n, n);
  snap.adj_si = AdjMatrix::falses(n, n_ind);
  snap.edge_ss = Tensor::zeros({n, n, 2});
  snap.edge_si = Tensor::zeros({n, n_ind, 2});

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double sec = sector_sim(in.gics[i], in.gics[j]);
      const double sh = shareholder_sim(in.holders.rows[i], in.holders.rows[j]);
      snap.edge_ss.at3(i, j, 0) = sec;
      snap.edge_ss.at3(i, j, 1) = sh;
      snap.adj_ss.set(i, j, sec > 0.0 || sh > 0.0);
    }
  }

  const std::vector<double> shares = market_shares(in.revenues);
  const double span = esg_hi - esg_lo;
  for (std::size_t i = 0; i < n; ++i) {
    double gov = 0.5;  // constant governance within the window carries no ordering
    if (span > 0.0) gov = std::clamp((in.esg[i] - esg_lo) / span, 0.0, 1.0);
    for (std::size_t l = 0; l < n_ind; ++l) {
      snap.adj_si.set(i, l, true);  // every stock ties to its industry node
      snap.edge_si.at3(i, l, 0) = shares[i];
      snap.edge_si.at3(i, l, 1) = gov;
    }
  }
  return snap;
}

MetapathView compile_metapath(const GraphSnapshot& snapshot, Metapath path) {
  const std::size_t n = snapshot.n_stocks;
  MetapathView view;
  view.path = path;
  view.adjacency = AdjMatrix::falses(n, n);
  view.edge_features = Tensor::zeros({n, n, 2});

  if (path == Metapath::SS) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) {
          view.adjacency.set(i, i, true);
          view.edge_features.at3(i, i, 0) = 1.0;
          view.edge_features.at3(i, i, 1) = 1.0;
        } else if (snapshot.adj_ss.at(i, j)) {
          view.adjacency.set(i, j, true);
          view.edge_features.at3(i, j, 0) = snapshot.edge_ss.at3(i, j, 0);
          view.edge_features.at3(i, j, 1) = snapshot.edge_ss.at3(i, j, 1);
        }
      }
    }
    return view;
  }

  // SIS: boolean clamp of A_SI * A_SI^T; features averaged along each
  // two-edge path, then over the shared industries.
  const std::size_t n_ind = snapshot.n_industries;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double ch0 = 0.0, ch1 = 0.0;
      std::size_t shared = 0;
      for (std::size_t l = 0; l < n_ind; ++l) {
        if (snapshot.adj_si.at(i, l) && snapshot.adj_si.at(j, l)) {
          ++shared;
          ch0 += 0.5 * (snapshot.edge_si.at3(i, l, 0) + snapshot.edge_si.at3(j, l, 0));
          ch1 += 0.5 * (snapshot.edge_si.at3(i, l, 1) + snapshot.edge_si.at3(j, l, 1));
        }
      }
      if (shared > 0) {
        view.adjacency.set(i, j, true);
        view.edge_features.at3(i, j, 0) = ch0 / static_cast<double>(shared);
        view.edge_features.at3(i, j, 1) = ch1 / static_cast<double>(shared);
      }
    }
  }
  // self-loop carries the node's own stock-industry attributes
  for (std::size_t i = 0; i < n; ++i) {
    view.adjacency.set(i, i, true);
    double ch0 = 0.0, ch1 = 0.0;
    std::size_t count = 0;
    for (std::size_t l = 0; l < n_ind; ++l) {
      if (snapshot.adj_si.at(i, l)) {
        ++count;
        ch0 += snapshot.edge_si.at3(i, l, 0);
        ch1 += snapshot.edge_si.at3(i, l, 1);
      }
    }
    if (count > 0) {
      view.edge_features.at3(i, i, 0) = ch0 / static_cast<double>(count);
      view.edge_features.at3(i, i, 1) = ch1 / static_cast<double>(count);
    }
  }
  return view;
}

int graph_diameter_check(const GraphSnapshot& snapshot) {
  const std::size_t n = snapshot.n_stocks;
  const std::size_t m = n + snapshot.n_industries;
  const int inf = std::numeric_limits<int>::max();

  auto neighbors = [&](std::size_t u, std::vector<std::size_t>& out) {
    out.clear();
    if (u < n) {
      for (std::size_t j = 0; j < n; ++j)
        if (j != u && snapshot.adj_ss.at(u, j)) out.push_back(j);
      for (std::size_t l = 0; l < snapshot.n_industries; ++l)
        if (snapshot.adj_si.at(u, l)) out.push_back(n + l);
    } else {
      const std::size_t l = u - n;
      for (std::size_t i = 0; i < n; ++i)
        if (snapshot.adj_si.at(i, l)) out.push_back(i);
    }
  };

  int diameter = 0;
  std::vector<int> dist(m);
  std::vector<std::size_t> nbrs;
  for (std::size_t src = 0; src < n; ++src) {
    std::fill(dist.begin(), dist.end(), inf);
    dist[src] = 0;
    std::deque<std::size_t> queue{src};
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      neighbors(u, nbrs);
      for (std::size_t w : nbrs) {
        if (dist[w] == inf) {
          dist[w] = dist[u] + 1;
          queue.push_back(w);
        }
      }
    }
    for (std::size_t dst = 0; dst < n; ++dst) {
      if (dst == src) continue;
      if (dist[dst] == inf) return inf;  // disconnected stock pair
      diameter = std::max(diameter, dist[dst]);
    }
  }
  return diameter;
}

namespace {

json tensor_to_rows(const Tensor& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    json r = json::array();
    for (std::size_t j = 0; j < t.cols(); ++j) r.push_back(t.at2(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Tensor rows_to_tensor(const json& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows[0].size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("snapshot json: ragged feature rows");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return Tensor({r, c}, std::move(data));
}

}  // namespace

std::string snapshot_inputs_to_json(const SnapshotInputs& in) {
  json j;
  j["schema"] = "v1";
  j["date"] = in.date;
  j["tickers"] = in.tickers;
  json gics = json::array();
  for (const GicsCode& g : in.gics) {
    gics.push_back({g.sector(), g.industry_group(), g.industry(), g.sub_industry()});
  }
  j["gics"] = std::move(gics);
  json holders = json::array();
  for (const HolderRow& row : in.holders.rows) {
    json h = json::object();
    for (const auto& [id, w] : row) h[std::to_string(id)] = w;
    holders.push_back(std::move(h));
  }
  j["holders"] = std::move(holders);
  j["revenues"] = in.revenues;
  j["esg"] = in.esg;
  j["features"] = tensor_to_rows(in.stock_features);
  j["industry_features"] = tensor_to_rows(in.industry_features);
  j["prices"] = in.prices;
  j["index_level"] = in.index_level;
  return j.dump(2) + "\n";
}

SnapshotInputs snapshot_inputs_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("schema") || j["schema"].get<std::string>() != "v1") {
    throw std::invalid_argument("snapshot json: unsupported schema version");
  }
  SnapshotInputs in;
  in.date = j.at("date").get<int>();
  in.tickers = j.at("tickers").get<std::vector<std::string>>();
  for (const auto& g : j.at("gics")) {
    in.gics.emplace_back(g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>(),
                         g.at(3).get<int>());
  }
  for (const auto& h : j.at("holders")) {
    HolderRow row;
    for (auto it = h.begin(); it != h.end(); ++it) {
      row[std::stoi(it.key())] = it.value().get<double>();
    }
    in.holders.rows.push_back(std::move(row));
  }
  auto read_nullable = [](const json& arr) {
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
      out.push_back(v.is_null() ? std::nan("") : v.get<double>());
    }
    return out;
  };
  in.revenues = read_nullable(j.at("revenues"));
  in.esg = read_nullable(j.at("esg"));
  in.stock_features = rows_to_tensor(j.at("features"));
  in.industry_features = rows_to_tensor(j.at("industry_features"));
  in.prices = j.at("prices").get<std::vector<double>>();
  in.index_level = j.at("index_level").get<double>();
  return in;
}

}  // namespace omni::graph
