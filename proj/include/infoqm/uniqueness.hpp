#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "infoqm/axioms.hpp"

namespace infoqm {

// Exhaustive scan over a finite basis of candidate densities built from
// functions of p. Each block is reduced by the chain rule onto scale-free
// invariants with coefficient functions p^a (log p)^k; the axioms then act as
// linear constraints on the coefficient space.

struct ScanConfig {
  int max_terms = 3;
  int ahd_bound = 2;
  bool periodic_only = false;
  std::uint64_t seed = 1;
};

namespace scan {

// p^(a2/2) (log p)^k
struct Key {
  int a2 = 0;
  int k = 0;
  friend bool operator<(const Key& x, const Key& y) { return x.a2 != y.a2 ? x.a2 < y.a2 : x.k < y.k; }
  friend bool operator==(const Key& x, const Key& y) { return x.a2 == y.a2 && x.k == y.k; }
};

using Poly = std::map<Key, double>;

inline Poly mono(int a2, int k = 0, double c = 1.0) { return c == 0.0 ? Poly{} : Poly{{Key{a2, k}, c}}; }

inline Poly mul(const Poly& x, const Poly& y) {
  Poly out;
  for (const auto& [kx, cx] : x)
    for (const auto& [ky, cy] : y) out[Key{kx.a2 + ky.a2, kx.k + ky.k}] += cx * cy;
  std::erase_if(out, [](const auto& kv) { return kv.second == 0.0; });
  return out;
}

inline Poly mul(const Poly& x, const Poly& y, const Poly& z) { return mul(mul(x, y), z); }

inline Poly deriv(const Poly& x) {
  Poly out;
  for (const auto& [key, c] : x) {
    if (key.a2 != 0) out[Key{key.a2 - 2, key.k}] += c * key.a2 / 2.0;
    if (key.k > 0) out[Key{key.a2 - 2, key.k - 1}] += c * key.k;
  }
  std::erase_if(out, [](const auto& kv) { return kv.second == 0.0; });
  return out;
}

inline Poly times_p(const Poly& x, int power) { return mul(x, mono(2 * power)); }

struct Function {
  std::string name;
  Poly f;
  int a2 = 0;  // exponent for the sum rule; log p counts as 0
  bool is_log = false;
};

inline std::vector<Function> basis_functions() {
  std::vector<Function> out;
  for (int a2 = -4; a2 <= 4; ++a2) {
    std::string n = a2 == 0 ? "1" : (a2 == 2 ? "p" : "p^(" + (a2 % 2 ? std::to_string(a2) + "/2" : std::to_string(a2 / 2)) + ")");
    out.push_back({n, mono(a2), a2, false});
  }
  out.push_back({"log(p)", mono(0, 1), 0, true});
  return out;
}

enum Inv { J0, J1, J2, K1, K2, NumInv };

inline const char* inv_text(int i) {
  static const char* t[] = {"gg(log(p), log(p))^(1/2)", "gg(log(p), log(p))", "lap(p)/p",
                            "gg(log(p), log(p))*gg(log(p), log(p))", "gg(log(p), gg(log(p), log(p)))"};
  return t[i];
}

inline Expr inv_expr(int i) {
  using namespace dsl;
  const Expr L = log(p()), G = gg(L, L);
  switch (i) {
    case J0:
      return pow(G, Rational(1, 2));
    case J1:
      return G;
    case J2:
      return lap(p()) / p();
    case K1:
      return G * G;
    default:
      return gg(L, G);
  }
}

struct Template {
  std::string name;
  int derivatives = 0;
  bool rotational = true;
  int slots = 0;
  std::string note;
};

inline std::vector<Template> templates() {
  return {
      {"U1*d_i(U2)", 1, false, 2, "free index, not a scalar"},
      {"U1*d_i(d_j(U2))", 2, false, 2, "free indices, not a scalar"},
      {"U1*gg(U2, U3)", 2, true, 3, ""},
      {"V1*lap(V2)", 2, true, 2, ""},
      {"U1*gg(U2, U2)^(1/2)", 2, true, 2, "non-polynomial in the derivatives"},
      {"U1*gg(U2, U3)*gg(U4, U5)", 4, true, 5, ""},
      {"U1*gg(U2, gg(U3, U4))", 4, true, 4, ""},
  };
}

// Coefficient functions per invariant for one block.
using Reduction = std::array<Poly, NumInv>;

struct Block {
  std::size_t tmpl = 0;
  std::vector<std::size_t> slots;
  Reduction red;
  std::string text;
  int exponent_sum2 = 0;  // twice the exponent sum
  bool has_log_factor = false;
};

inline bool is_zero(const Reduction& r) {
  for (const auto& p : r)
    if (!p.empty()) return false;
  return true;
}

inline bool is_homogeneous(const Reduction& r) {
  for (const auto& p : r)
    for (const auto& [k, c] : p)
      if (!(k.a2 == 0 && k.k == 0)) return false;
  return true;
}

inline Eigen::VectorXd invariant_part(const Reduction& r) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(NumInv);
  for (int i = 0; i < NumInv; ++i) {
    auto it = r[i].find(Key{0, 0});
    if (it != r[i].end()) v[i] = it->second;
  }
  return v;
}

inline std::string block_text(const Template& t, const std::vector<Function>& F, const std::vector<std::size_t>& s) {
  std::string out = t.name;
  const char* names[] = {"U1", "U2", "U3", "U4", "U5"};
  const char* vnames[] = {"V1", "V2"};
  bool v = t.name.rfind("V1", 0) == 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::string key = v ? vnames[i] : names[i];
    std::size_t pos;
    while ((pos = out.find(key)) != std::string::npos) out.replace(pos, key.size(), F[s[i]].name);
  }
  return out;
}

inline std::vector<Block> enumerate_blocks(const std::vector<Function>& F, int ahd_bound, std::vector<std::size_t>& per_template) {
  const auto T = templates();
  per_template.assign(T.size(), 0);
  std::vector<Block> out;
  const std::size_t n = F.size();
  auto d = [&](std::size_t i) { return deriv(F[i].f); };
  auto push = [&](std::size_t t, std::vector<std::size_t> s, Reduction red, int esum2, bool logf) {
    ++per_template[t];
    Block b{t, s, std::move(red), block_text(T[t], F, s), esum2, logf};
    out.push_back(std::move(b));
  };
  for (std::size_t t = 0; t < T.size(); ++t) {
    if (!T[t].rotational || T[t].derivatives > ahd_bound) continue;
    if (t == 2) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = b; c < n; ++c) {
            Reduction r;
            r[J1] = times_p(mul(F[a].f, d(b), d(c)), 2);
            push(t, {a, b, c}, r, F[a].a2 + F[b].a2 + F[c].a2, F[a].is_log);
          }
    } else if (t == 3) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          Reduction r;
          r[J2] = times_p(mul(F[a].f, d(b)), 1);
          r[J1] = times_p(mul(F[a].f, deriv(d(b))), 2);
          push(t, {a, b}, r, F[a].a2 + F[b].a2, F[a].is_log);
        }
    } else if (t == 4) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          Poly q = times_p(d(b), 1);  // U2' p, a single term for every basis function
          for (auto& kv : q) kv.second = std::abs(kv.second);
          Reduction r;
          r[J0] = mul(F[a].f, q);
          push(t, {a, b}, r, F[a].a2 + F[b].a2, F[a].is_log);
        }
    } else if (t == 5) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = b; c < n; ++c)
            for (std::size_t e = b; e < n; ++e)
              for (std::size_t f = e; f < n; ++f) {
                if (e == b && f < c) continue;
                Reduction r;
                r[K1] = times_p(mul(mul(F[a].f, d(b), d(c)), mul(d(e), d(f))), 4);
                push(t, {a, b, c, e, f}, r, F[a].a2 + F[b].a2 + F[c].a2 + F[e].a2 + F[f].a2, F[a].is_log);
              }
    } else if (t == 6) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = 0; c < n; ++c)
            for (std::size_t e = c; e < n; ++e) {
              const Poly W = mul(d(c), d(e));
              Reduction r;
              r[K1] = times_p(mul(F[a].f, d(b), deriv(times_p(W, 2))), 2);
              r[K2] = times_p(mul(F[a].f, d(b), W), 3);
              push(t, {a, b, c, e}, r, F[a].a2 + F[b].a2 + F[c].a2 + F[e].a2, F[a].is_log);
            }
    }
  }
  return out;
}

// --- linear algebra on small subspaces -----------------------------------------

// Orthonormal basis of the column space.
inline Eigen::MatrixXd orth(const Eigen::MatrixXd& M, double tol = 1e-9) {
  if (M.cols() == 0 || M.rows() == 0) return Eigen::MatrixXd(M.rows(), 0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s[0] : 0.0;
  Eigen::Index r = 0;
  while (r < s.size() && s[r] > tol * std::max(1.0, smax)) ++r;
  return svd.matrixU().leftCols(r);
}

inline Eigen::MatrixXd intersect(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double tol = 1e-9) {
  if (A.cols() == 0 || B.cols() == 0) return Eigen::MatrixXd(A.rows(), 0);
  Eigen::MatrixXd C(A.rows(), A.cols() + B.cols());
  C << A, -B;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s[0] : 0.0;
  std::vector<Eigen::Index> null;
  for (Eigen::Index i = 0; i < C.cols(); ++i) {
    const double si = i < s.size() ? s[i] : 0.0;
    if (si <= tol * std::max(1.0, smax)) null.push_back(i);
  }
  Eigen::MatrixXd X(A.rows(), static_cast<Eigen::Index>(null.size()));
  for (std::size_t j = 0; j < null.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = A * svd.matrixV().col(null[j]).head(A.cols());
  return orth(X, tol);
}

inline bool same_subspace(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double tol = 1e-8) {
  if (A.cols() != B.cols()) return false;
  if (A.cols() == 0) return true;
  return (A * A.transpose() - B * B.transpose()).norm() < tol;
}

// Reduced row echelon form of a basis, for display.
inline std::vector<std::vector<double>> rref_rows(const Eigen::MatrixXd& basis) {
  Eigen::MatrixXd R = basis.transpose();
  const Eigen::Index rows = R.rows(), cols = R.cols();
  Eigen::Index lead = 0;
  for (Eigen::Index r = 0; r < rows && lead < cols; ++r, ++lead) {
    Eigen::Index i = r;
    while (std::abs(R(i, lead)) < 1e-9) {
      if (++i == rows) {
        i = r;
        if (++lead == cols) break;
      }
    }
    if (lead == cols) break;
    R.row(i).swap(R.row(r));
    R.row(r) /= R(r, lead);
    for (Eigen::Index j = 0; j < rows; ++j)
      if (j != r) R.row(j) -= R(j, lead) * R.row(r);
  }
  std::vector<std::vector<double>> out;
  for (Eigen::Index r = 0; r < rows; ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v = R(r, c);
      const double q = std::round(v * 1e6) / 1e6;
      row.push_back(std::abs(v - q) < 1e-9 ? (q == 0.0 ? 0.0 : q) : v);
    }
    out.push_back(row);
  }
  return out;
}

inline std::string direction_text(const std::vector<double>& row) {
  std::string out;
  for (int i = 0; i < NumInv; ++i) {
    if (row[i] == 0.0) continue;
    const double c = row[i];
    std::string term = c == 1.0 ? std::string(inv_text(i)) : format_double(c) + "*" + inv_text(i);
    out += out.empty() ? term : (c < 0 ? " - " + (c == -1.0 ? std::string(inv_text(i)) : format_double(-c) + "*" + inv_text(i)) : " + " + term);
  }
  return out;
}

inline json family_json(const Eigen::MatrixXd& basis) {
  json g = json::array();
  for (const auto& row : rref_rows(basis)) g.push_back(direction_text(row));
  return json{{"dimension", basis.cols()}, {"generators", g}};
}

// Coordinates of the full coefficient space: (invariant, a2, k).
struct CoordIndex {
  std::map<std::tuple<int, int, int>, Eigen::Index> idx;
  Eigen::Index add(int inv, const Key& k) {
    auto key = std::make_tuple(inv, k.a2, k.k);
    auto it = idx.find(key);
    if (it != idx.end()) return it->second;
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    idx.emplace(key, n);
    return n;
  }
};

}  // namespace scan

struct ScanResult {
  json trace;
  int dimension = 0;
  std::vector<std::string> generators;
  bool order_invariant = false;
  bool sums_unchanged = false;
};

inline ScanResult uniqueness_scan(const ScanConfig& cfg) {
  using namespace scan;
  if (cfg.max_terms < 1) throw InvalidArgument("max-terms must be at least 1");
  if (cfg.ahd_bound < 0) throw InvalidArgument("ahd-bound must be non-negative");
  ScanResult res;
  json& tr = res.trace;
  const auto F = basis_functions();
  const auto T = templates();

  json fnames = json::array();
  for (const auto& f : F) fnames.push_back(f.name);
  tr["config"] = {{"max_terms", cfg.max_terms}, {"ahd_bound", cfg.ahd_bound}, {"periodic_only", cfg.periodic_only}, {"seed", cfg.seed}};
  tr["basis"] = {{"functions", fnames}, {"coefficient_form", "p^a (log p)^k"}};
  json steps = json::array();

  // step 1: rotational invariance and derivative bound select the templates
  {
    json adm = json::array(), rej = json::array();
    for (const auto& t : T) {
      json j{{"template", t.name}, {"derivatives", t.derivatives}};
      if (!t.note.empty()) j["note"] = t.note;
      if (!t.rotational) {
        j["reason"] = "rotational invariance";
        rej.push_back(j);
      } else if (t.derivatives > cfg.ahd_bound) {
        j["reason"] = "ahd: " + std::to_string(t.derivatives) + " > " + std::to_string(cfg.ahd_bound);
        rej.push_back(j);
      } else {
        adm.push_back(j);
      }
    }
    steps.push_back({{"axiom", "rotational invariance + ahd"}, {"admitted", adm}, {"rejected", rej}});
  }

  std::vector<std::size_t> per_template;
  const auto blocks = enumerate_blocks(F, cfg.ahd_bound, per_template);

  // step 2: homogeneity, block by block and under sums
  std::vector<std::size_t> live;
  std::size_t vanishing = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) (is_zero(blocks[i].red) ? vanishing : (live.push_back(i), vanishing))++;
  std::vector<std::size_t> homog;
  for (std::size_t i : live)
    if (is_homogeneous(blocks[i].red)) homog.push_back(i);

  Eigen::MatrixXd single(NumInv, static_cast<Eigen::Index>(homog.size()));
  for (std::size_t j = 0; j < homog.size(); ++j) single.col(static_cast<Eigen::Index>(j)) = invariant_part(blocks[homog[j]].red);
  const Eigen::MatrixXd H1 = orth(single);

  // pairs: two blocks cancel their scale-dependent parts when those parts are parallel
  auto nonhom_signature = [&](const Reduction& r, double& lead) {
    std::string sig;
    lead = 0.0;
    for (int i = 0; i < NumInv; ++i)
      for (const auto& [k, c] : r[i]) {
        if (k.a2 == 0 && k.k == 0) continue;
        if (lead == 0.0) lead = c;
        sig += std::to_string(i) + ":" + std::to_string(k.a2) + ":" + std::to_string(k.k) + "=" + format_double(c / lead) + ";";
      }
    return sig;
  };
  Eigen::MatrixXd H2 = H1;
  if (cfg.max_terms >= 2) {
    std::map<std::string, std::vector<std::pair<std::size_t, double>>> groups;
    for (std::size_t i : live) {
      double lead = 0;
      std::string sig = nonhom_signature(blocks[i].red, lead);
      if (!sig.empty()) groups[sig].push_back({i, lead});
    }
    std::vector<Eigen::VectorXd> extra;
    for (const auto& [sig, g] : groups)
      for (std::size_t j = 1; j < g.size(); ++j) {
        Eigen::VectorXd v = invariant_part(blocks[g[0].first].red) / g[0].second - invariant_part(blocks[g[j].first].red) / g[j].second;
        if (v.norm() > 1e-12) extra.push_back(v);
      }
    Eigen::MatrixXd M(NumInv, H1.cols() + static_cast<Eigen::Index>(extra.size()));
    M.leftCols(H1.cols()) = H1;
    for (std::size_t j = 0; j < extra.size(); ++j) M.col(H1.cols() + static_cast<Eigen::Index>(j)) = extra[j];
    H2 = orth(M);
  }

  // full linear closure in the coefficient space (any number of summed blocks)
  CoordIndex ci;
  for (int i = 0; i < NumInv; ++i) ci.add(i, Key{0, 0});
  for (std::size_t b : live)
    for (int i = 0; i < NumInv; ++i)
      for (const auto& [k, c] : blocks[b].red[i]) ci.add(i, k);
  const Eigen::Index D = static_cast<Eigen::Index>(ci.idx.size());
  std::map<std::string, Eigen::VectorXd> uniq;
  for (std::size_t b : live) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(D);
    for (int i = 0; i < NumInv; ++i)
      for (const auto& [k, c] : blocks[b].red[i]) v[ci.idx.at(std::make_tuple(i, k.a2, k.k))] = c;
    const double nv = v.norm();
    std::string key;
    for (Eigen::Index r = 0; r < D; ++r)
      if (v[r] != 0.0) key += std::to_string(r) + "=" + format_double(v[r] / nv) + ";";
    uniq.emplace(key, v / nv);
  }
  Eigen::MatrixXd Span(D, static_cast<Eigen::Index>(uniq.size()));
  {
    Eigen::Index j = 0;
    for (const auto& [k, v] : uniq) Span.col(j++) = v;
  }
  const Eigen::MatrixXd SpanB = orth(Span);

  // constraint subspaces of the coefficient space
  auto unit_cols = [&](auto pred) {
    std::vector<Eigen::Index> cols;
    for (const auto& [key, r] : ci.idx)
      if (pred(std::get<0>(key), std::get<1>(key), std::get<2>(key))) cols.push_back(r);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(D, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) U(cols[j], static_cast<Eigen::Index>(j)) = 1.0;
    return U;
  };
  const Eigen::MatrixXd Hom = unit_cols([](int, int a2, int k) { return a2 == 0 && k == 0; });

  // separability: numeric defect of each invariant on two-particle products
  EnsembleConfig ec;
  ec.seed = cfg.seed;
  ec.samples = 8;
  ec.truncated = false;
  ec.points = 48;
  const auto specs = generate_ensemble(ec);
  std::vector<Sample> ss;
  for (const auto& s : specs)
    if (auto r = realize(s)) ss.push_back(*r);
  Eigen::MatrixXd Def(0, NumInv);
  {
    std::vector<Eigen::VectorXd> cols(NumInv);
    for (std::size_t pr = 0; pr + 1 < ss.size() && pr < 4; pr += 2) {
      Sample prod = detail::product_of(ss[pr], ss[pr + 1]);
      const Grid& g = prod.state.grid();
      for (int i = 0; i < NumInv; ++i) {
        const Expr e = inv_expr(i);
        const ScalarField Hab = evaluate_density(e, prod.state, prod.metric).density;
        const ScalarField Ha = evaluate_density(e, ss[pr].state, ss[pr].metric).density;
        const ScalarField Hb = evaluate_density(e, ss[pr + 1].state, ss[pr + 1].metric).density;
        Eigen::VectorXd d(static_cast<Eigen::Index>(g.size()));
        for (std::size_t s = 0; s < g.size(); ++s) d[static_cast<Eigen::Index>(s)] = Hab[s] - Ha[g.axis_index(s, 0)] - Hb[g.axis_index(s, 1)];
        Eigen::VectorXd joined(cols[i].size() + d.size());
        joined << cols[i], d;
        cols[i] = joined;
      }
    }
    Def.resize(cols[0].size(), NumInv);
    for (int i = 0; i < NumInv; ++i) Def.col(i) = cols[i];
  }
  Eigen::MatrixXd SepInv;  // kernel of Def in invariant space
  json sep_defects = json::object();
  {
    for (int i = 0; i < NumInv; ++i) sep_defects[inv_text(i)] = Def.col(i).cwiseAbs().maxCoeff();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Def, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    std::vector<Eigen::Index> null;
    for (Eigen::Index i = 0; i < NumInv; ++i)
      if ((i < s.size() ? s[i] : 0.0) <= 1e-9 * std::sqrt(static_cast<double>(Def.rows()))) null.push_back(i);
    SepInv.resize(NumInv, static_cast<Eigen::Index>(null.size()));
    for (std::size_t j = 0; j < null.size(); ++j) SepInv.col(static_cast<Eigen::Index>(j)) = svd.matrixV().col(null[j]);
    SepInv = orth(SepInv);
  }
  // lift: scale-dependent coefficient functions are never additive under p = p1 p2
  Eigen::MatrixXd Sep = Eigen::MatrixXd::Zero(D, SepInv.cols());
  for (Eigen::Index j = 0; j < SepInv.cols(); ++j)
    for (int i = 0; i < NumInv; ++i) Sep(ci.idx.at(std::make_tuple(i, 0, 0)), j) = SepInv(i, j);

  // positivity: nearly uniform densities with an edge feature drive |flux| / I_F without bound
  json eps_table = json::array();
  double b_lo = -INFINITY, b_hi = INFINITY;
  bool flux_seen = false;
  {
    const Boundary bc = cfg.periodic_only ? Boundary::Periodic : Boundary::Truncated;
    auto g = Grid::make(GridSpec::line(192, 0.0, 2.0 * std::numbers::pi, bc));
    Metric m({1.0}, 1);
    for (int e = 1; e <= 6; ++e) {
      const double eps = std::pow(10.0, -e);
      double lo = -INFINITY, hi = INFINITY;
      json row{{"epsilon", eps}};
      for (double side : {1.0, -1.0}) {
        HydroField h(ScalarField::from_function(g, [&](auto x) {
                       const double z = (x[0] - side * 0.3) / 0.3;
                       return 1.0 + eps * std::exp(-0.5 * z * z);
                     }),
                     ScalarField(g, 0.0));
        h.normalize();
        const double I = fisher_information(h, m), flux = surface_term(h, m);
        row[side > 0 ? "inside" : "outside"] = {{"fisher", I}, {"flux", flux}};
        if (std::abs(flux) > 1e-12 * std::max(1.0, I)) {
          flux_seen = true;
          if (flux > 0)
            lo = std::max(lo, -I / flux);
          else
            hi = std::min(hi, I / -flux);
        }
      }
      row["B_interval"] = {std::isfinite(lo) ? json(lo) : json(nullptr), std::isfinite(hi) ? json(hi) : json(nullptr)};
      eps_table.push_back(row);
      b_lo = lo, b_hi = hi;
    }
  }
  const bool b_forced = flux_seen && std::isfinite(b_lo) && std::isfinite(b_hi) && std::max(-b_lo, b_hi) < 1e-5;
  Eigen::MatrixXd Pos = b_forced ? unit_cols([](int inv, int a2, int k) { return !(inv == J2 && a2 == 0 && k == 0); })
                                 : Eigen::MatrixXd::Identity(D, D);

  // sequential intersections in every order
  auto project_inv = [&](const Eigen::MatrixXd& B) {
    Eigen::MatrixXd P(NumInv, B.cols());
    for (int i = 0; i < NumInv; ++i) P.row(i) = B.row(ci.idx.at(std::make_tuple(i, 0, 0)));
    return P;
  };
  const std::array<const Eigen::MatrixXd*, 3> cons{&Hom, &Sep, &Pos};
  const std::array<const char*, 3> cname{"homogeneity", "separability", "positivity"};
  std::array<int, 3> order{0, 1, 2};
  Eigen::MatrixXd final_ref;
  std::vector<Eigen::MatrixXd> stage;
  bool invariant = true;
  json orders = json::array();
  do {
    Eigen::MatrixXd X = SpanB;
    std::vector<Eigen::MatrixXd> st;
    for (int c : order) {
      X = intersect(X, *cons[c]);
      st.push_back(X);
    }
    json o = json::array();
    for (int c : order) o.push_back(cname[c]);
    orders.push_back({{"order", o}, {"dimension", X.cols()}});
    if (final_ref.size() == 0 && stage.empty()) {
      final_ref = X;
      stage = st;
    } else if (!same_subspace(X, final_ref)) {
      invariant = false;
    }
  } while (std::next_permutation(order.begin(), order.end()));

  const Eigen::MatrixXd afterH = orth(project_inv(stage[0]));
  const Eigen::MatrixXd afterS = orth(project_inv(stage[1]));
  const Eigen::MatrixXd family = orth(project_inv(stage[2]));

  // homogeneity step record
  {
    std::map<int, std::size_t> by_sum;
    std::size_t log_factor = 0;
    for (std::size_t i : live) {
      if (blocks[i].has_log_factor) {
        ++log_factor;
        continue;
      }
      if (blocks[i].tmpl == 2 || blocks[i].tmpl == 3) by_sum[blocks[i].exponent_sum2]++;
    }
    json hist = json::array();
    for (const auto& [s2, c] : by_sum) hist.push_back({{"exponent_sum", format_double(s2 / 2.0)}, {"blocks", c}});
    json surv = json::array();
    for (std::size_t j = 0; j < homog.size() && surv.size() < 12; ++j) surv.push_back(blocks[homog[j]].text);
    json counts = json::array();
    for (std::size_t t = 0; t < T.size(); ++t)
      if (per_template[t]) counts.push_back({{"template", T[t].name}, {"blocks", per_template[t]}});
    steps.push_back({{"axiom", "homogeneity"},
                     {"constraints",
                      {"gg blocks U1*gg(U2,U3): u1+u2+u3 = 0", "lap blocks V1*lap(V2): v1+v2 = 0",
                       "log(p) differentiated counts as exponent 0; an undifferentiated log(p) factor shifts under scaling"}},
                     {"blocks", counts},
                     {"vanishing_identically", vanishing},
                     {"exponent_sums", hist},
                     {"log_factor_blocks", log_factor},
                     {"surviving_blocks", homog.size()},
                     {"surviving_examples", surv},
                     {"reduced_to", "constant coefficients times scale-free invariants"},
                     {"family", family_json(afterH)}});
  }
  steps.push_back({{"axiom", "separability"},
                   {"test", "H(p1*p2) - H(p1) - H(p2) on two-particle products"},
                   {"max_defect", sep_defects},
                   {"constraint", "linear in g; scale-dependent coefficients are not additive under p = p1*p2"},
                   {"family", family_json(afterS)}});
  {
    json pos{{"axiom", "positivity"}, {"ensemble", cfg.periodic_only ? "periodic" : "truncated"}, {"edge_sequence", eps_table}};
    if (b_forced) {
      pos["conclusion"] = "surface term lap(p)/p has flux of both signs with |flux|/I_F unbounded: B = 0";
    } else {
      pos["conclusion"] = "no boundary flux on this ensemble: B is unconstrained by positivity";
      pos["boundary_dependence"] = true;
    }
    // directions other than the Fisher one keep a finite admissible window
    EnsembleConfig pe;
    pe.seed = cfg.seed;
    pe.truncated = !cfg.periodic_only;
    pe.samples = 24;
    json windows = json::array();
    for (const auto& row : rref_rows(family)) {
      if (std::abs(row[J1]) > 0 && std::count_if(row.begin(), row.end(), [](double v) { return v != 0.0; }) == 1) continue;
      Expr e = Expr::number(0.0);
      for (int i = 0; i < NumInv; ++i)
        if (row[i] != 0.0) e = dsl::operator+(e, dsl::operator*(row[i], inv_expr(i)));
      double lo = -INFINITY, hi = INFINITY;
      for (const auto& s : generate_ensemble(pe)) {
        auto smp = realize(s);
        if (!smp) continue;
        const double I = fisher_information(smp->state, smp->metric);
        const double X = detail::measure_on(e, *smp, {}, false);
        if (X > 1e-14) lo = std::max(lo, -I / X);
        if (X < -1e-14) hi = std::min(hi, I / -X);
      }
      windows.push_back({{"direction", direction_text(row)},
                         {"coefficient_window", {std::isfinite(lo) ? json(lo) : json(nullptr), std::isfinite(hi) ? json(hi) : json(nullptr)}}});
    }
    if (!windows.empty()) pos["not_eliminated"] = windows;
    pos["family"] = family_json(family);
    steps.push_back(pos);
  }
  tr["steps"] = steps;

  // rechecks with a bounded number of summed blocks
  {
    json sums = json::array();
    auto fam_n = [&](const Eigen::MatrixXd& Hn) {
      Eigen::MatrixXd X = Hn;
      X = intersect(X, SepInv);
      if (b_forced) {
        Eigen::MatrixXd noB = Eigen::MatrixXd::Identity(NumInv, NumInv);
        Eigen::MatrixXd keep(NumInv, NumInv - 1);
        for (int i = 0, c = 0; i < NumInv; ++i)
          if (i != J2) keep.col(c++) = noB.col(i);
        X = intersect(X, keep);
      }
      return X;
    };
    bool unchanged = true;
    for (int n = 1; n <= cfg.max_terms; ++n) {
      const Eigen::MatrixXd Hn = n == 1 ? H1 : (n == 2 ? H2 : afterH);
      const Eigen::MatrixXd fn = fam_n(Hn);
      unchanged = unchanged && same_subspace(fn, family);
      json j{{"terms", n}, {"family", family_json(fn)}};
      if (n >= 3) j["method"] = "linear closure over all sums of blocks";
      sums.push_back(j);
    }
    tr["summed_terms"] = sums;
    res.sums_unchanged = unchanged;
  }
  tr["order_invariance"] = {{"orders", orders}, {"identical", invariant}};
  res.order_invariant = invariant;

  json surv = family_json(family);
  json cons_j = json::array();
  if (family.cols() > 0) cons_j.push_back("Fisher coefficient A > 0");
  surv["constraints"] = cons_j;
  surv["scope"] = "exhaustive over the declared finite basis";
  tr["survivors"] = surv;
  res.dimension = static_cast<int>(family.cols());
  for (const auto& g : surv["generators"]) res.generators.push_back(g.get<std::string>());
  return res;
}

}  // namespace infoqm
