#include "kmpc/dictionary.hpp"

#include "kmpc/format.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kmpc {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Exponent vectors of total degree `deg` in lexicographically decreasing order.
void enumerate_degree(Index n, int deg, std::vector<int>& current, Index pos,
                      std::vector<std::vector<int>>& out) {
  if (pos == n - 1) {
    current[static_cast<std::size_t>(pos)] = deg;
    out.push_back(current);
    return;
  }
  for (int e = deg; e >= 0; --e) {
    current[static_cast<std::size_t>(pos)] = e;
    enumerate_degree(n, deg - e, current, pos + 1, out);
  }
}

bool is_unit(const std::vector<int>& e, Index j) {
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e[i] != (static_cast<Index>(i) == j ? 1 : 0)) return false;
  }
  return true;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string strip_prefix(const std::string& s, const std::string& prefix) {
  if (s.rfind(prefix, 0) != 0) {
    throw ContractViolation("dictionary id: expected '" + prefix + "' in '" + s + "'");
  }
  return s.substr(prefix.size());
}

}  // namespace

int MonomialObservable::degree() const {
  int d = 0;
  for (int e : exponents) d += e;
  return d;
}

std::string to_string(StructureFlag f) {
  switch (f) {
    case StructureFlag::constant:
      return "constant";
    case StructureFlag::coordinate:
      return "coordinate";
    case StructureFlag::higher_order:
      return "higher-order";
    case StructureFlag::nonconforming:
      return "nonconforming";
  }
  return "unknown";
}

bool Dictionary::conforming() const {
  return std::none_of(flags_.begin(), flags_.end(),
                      [](StructureFlag f) { return f == StructureFlag::nonconforming; });
}

Dictionary Dictionary::with_lipschitz_bound(double bound) const {
  Dictionary d = *this;
  d.lipschitz_bound_ = bound;
  return d;
}

void Dictionary::classify() {
  flags_.clear();
  warnings_.clear();
  max_power_ = 0;
  for (Index k = 0; k < size(); ++k) {
    const auto& obs = observables_[static_cast<std::size_t>(k)];
    StructureFlag flag = StructureFlag::nonconforming;
    if (const auto* m = std::get_if<MonomialObservable>(&obs)) {
      for (int e : m->exponents) max_power_ = std::max(max_power_, e);
      const int deg = m->degree();
      if (k == 0 && deg == 0) {
        flag = StructureFlag::constant;
      } else if (k >= 1 && k <= n_x_ && is_unit(m->exponents, k - 1)) {
        flag = StructureFlag::coordinate;
      } else if (k > n_x_ && deg >= 2) {
        flag = StructureFlag::higher_order;
      }
    }
    if (flag == StructureFlag::nonconforming && k > n_x_) {
      warnings_.push_back("observable " + std::to_string(k + 1) + " (" + observable_name(k) +
                          ") violates psi(0)=0 or grad psi(0)=0; proportional error bounds "
                          "are not certified for this dictionary");
    }
    flags_.push_back(flag);
  }
}

std::string Dictionary::observable_name(Index k) const {
  const auto& obs = observables_.at(static_cast<std::size_t>(k));
  return std::visit(
      overloaded{[](const MonomialObservable& m) {
                   if (m.degree() == 0) return std::string("1");
                   std::string s;
                   for (std::size_t j = 0; j < m.exponents.size(); ++j) {
                     if (m.exponents[j] == 0) continue;
                     if (!s.empty()) s += "*";
                     s += "x" + std::to_string(j + 1);
                     if (m.exponents[j] > 1) s += "^" + std::to_string(m.exponents[j]);
                   }
                   return s;
                 },
                 [](const ReciprocalExponential& r) {
                   std::string arg = "x" + std::to_string(r.index + 1);
                   if (r.offset != 0.0) arg = "(" + arg + "+" + format_double(r.offset) + ")";
                   return "exp(1/" + arg + ")";
                 }},
      obs);
}

std::string Dictionary::id() const {
  if (monomial_family_) {
    return "monomial(n_x=" + std::to_string(n_x_) +
           ",max_degree=" + std::to_string(monomial_degree_) + ")";
  }
  std::ostringstream os;
  os << "custom(n_x=" << n_x_ << ";ack=" << (acknowledge_singularity_ ? 1 : 0) << ";";
  for (std::size_t k = 0; k < observables_.size(); ++k) {
    if (k > 0) os << '|';
    std::visit(overloaded{[&](const MonomialObservable& m) {
                            os << "m:";
                            for (std::size_t j = 0; j < m.exponents.size(); ++j) {
                              if (j > 0) os << ',';
                              os << m.exponents[j];
                            }
                          },
                          [&](const ReciprocalExponential& r) {
                            os << "rexp:" << r.index << ',' << format_double(r.offset);
                          }},
               observables_[k]);
  }
  os << ")";
  return os.str();
}

Dictionary Dictionary::from_id(const std::string& id) {
  if (id.rfind("monomial(", 0) == 0) {
    const std::string body = id.substr(9, id.size() - 10);
    const auto parts = split(body, ',');
    if (parts.size() != 2 || id.back() != ')') {
      throw ContractViolation("dictionary id: malformed '" + id + "'");
    }
    return build_monomial_dictionary(std::stol(strip_prefix(parts[0], "n_x=")),
                                     std::stoi(strip_prefix(parts[1], "max_degree=")));
  }
  if (id.rfind("custom(", 0) == 0 && id.back() == ')') {
    const std::string body = id.substr(7, id.size() - 8);
    const auto sections = split(body, ';');
    if (sections.size() != 3) throw ContractViolation("dictionary id: malformed '" + id + "'");
    const Index n_x = std::stol(strip_prefix(sections[0], "n_x="));
    const bool ack = strip_prefix(sections[1], "ack=") == "1";
    std::vector<ObservableSpec> spec;
    for (const auto& item : split(sections[2], '|')) {
      if (item.rfind("m:", 0) == 0) {
        MonomialObservable m;
        for (const auto& e : split(item.substr(2), ',')) m.exponents.push_back(std::stoi(e));
        spec.emplace_back(m);
      } else if (item.rfind("rexp:", 0) == 0) {
        const auto f = split(item.substr(5), ',');
        if (f.size() != 2) throw ContractViolation("dictionary id: malformed rexp '" + item + "'");
        spec.emplace_back(ReciprocalExponential{std::stol(f[0]), std::stod(f[1])});
      } else {
        throw ContractViolation("dictionary id: unknown observable '" + item + "'");
      }
    }
    return build_custom_dictionary(n_x, std::move(spec), nullptr, ack);
  }
  throw ContractViolation("dictionary id: unrecognized '" + id + "'");
}

void Dictionary::eval(const ConstVecRef& x, VecRef out) const {
  if (x.size() != n_x_ || out.size() != size()) {
    throw ContractViolation("Dictionary::eval: dimension mismatch");
  }
  // powers(j, p) = x_j^p
  thread_local MatrixXd powers;
  powers.resize(n_x_, max_power_ + 1);
  for (Index j = 0; j < n_x_; ++j) {
    powers(j, 0) = 1.0;
    for (int p = 1; p <= max_power_; ++p) powers(j, p) = powers(j, p - 1) * x[j];
  }
  for (Index k = 0; k < size(); ++k) {
    const auto& obs = observables_[static_cast<std::size_t>(k)];
    if (const auto* m = std::get_if<MonomialObservable>(&obs)) {
      double v = 1.0;
      for (Index j = 0; j < n_x_; ++j) v *= powers(j, m->exponents[static_cast<std::size_t>(j)]);
      out[k] = v;
    } else {
      const auto& r = std::get<ReciprocalExponential>(obs);
      const double s = x[r.index] + r.offset;
      const double v = s == 0.0 ? std::numeric_limits<double>::infinity() : std::exp(1.0 / s);
      if (!std::isfinite(v)) {
        throw DomainError("observable " + std::to_string(k + 1) + " (" + observable_name(k) +
                          ") is undefined or overflows at x_" + std::to_string(r.index + 1) +
                          " = " + format_double(x[r.index]));
      }
      out[k] = v;
    }
  }
}

VectorXd Dictionary::eval(const ConstVecRef& x) const {
  VectorXd out(size());
  eval(x, out);
  return out;
}

void Dictionary::eval_gradient(const ConstVecRef& x, Eigen::Ref<MatrixXd> out) const {
  if (x.size() != n_x_ || out.rows() != size() || out.cols() != n_x_) {
    throw ContractViolation("Dictionary::eval_gradient: dimension mismatch");
  }
  thread_local MatrixXd powers;
  powers.resize(n_x_, max_power_ + 1);
  for (Index j = 0; j < n_x_; ++j) {
    powers(j, 0) = 1.0;
    for (int p = 1; p <= max_power_; ++p) powers(j, p) = powers(j, p - 1) * x[j];
  }
  out.setZero();
  for (Index k = 0; k < size(); ++k) {
    const auto& obs = observables_[static_cast<std::size_t>(k)];
    if (const auto* m = std::get_if<MonomialObservable>(&obs)) {
      for (Index j = 0; j < n_x_; ++j) {
        const int ej = m->exponents[static_cast<std::size_t>(j)];
        if (ej == 0) continue;
        double v = static_cast<double>(ej) * powers(j, ej - 1);
        for (Index i = 0; i < n_x_; ++i) {
          if (i != j) v *= powers(i, m->exponents[static_cast<std::size_t>(i)]);
        }
        out(k, j) = v;
      }
    } else {
      const auto& r = std::get<ReciprocalExponential>(obs);
      const double s = x[r.index] + r.offset;
      const double v = s == 0.0 ? std::numeric_limits<double>::infinity() : std::exp(1.0 / s);
      const double g = -v / (s * s);
      if (!std::isfinite(g)) {
        throw DomainError("gradient of observable " + std::to_string(k + 1) + " (" +
                          observable_name(k) + ") is undefined or overflows at x_" +
                          std::to_string(r.index + 1) + " = " + format_double(x[r.index]));
      }
      out(k, r.index) = g;
    }
  }
}

MatrixXd Dictionary::eval_gradient(const ConstVecRef& x) const {
  MatrixXd out(size(), n_x_);
  eval_gradient(x, out);
  return out;
}

Dictionary build_monomial_dictionary(Index n_x, int max_degree) {
  if (n_x < 1) throw ContractViolation("build_monomial_dictionary: n_x must be positive");
  if (max_degree < 1) throw ContractViolation("build_monomial_dictionary: max_degree must be >= 1");
  Dictionary d;
  d.n_x_ = n_x;
  d.monomial_family_ = true;
  d.monomial_degree_ = max_degree;
  std::vector<std::vector<int>> exps;
  std::vector<int> cur(static_cast<std::size_t>(n_x), 0);
  for (int deg = 0; deg <= max_degree; ++deg) enumerate_degree(n_x, deg, cur, 0, exps);
  for (auto& e : exps) d.observables_.emplace_back(MonomialObservable{std::move(e)});
  d.classify();
  return d;
}

Dictionary build_custom_dictionary(Index n_x, std::vector<ObservableSpec> spec, const Box* domain,
                                   bool acknowledge_singularity) {
  if (n_x < 1) throw ContractViolation("build_custom_dictionary: n_x must be positive");
  if (static_cast<Index>(spec.size()) < n_x + 1) {
    throw ContractViolation("build_custom_dictionary: spec must begin with the constant and " +
                            std::to_string(n_x) + " coordinate observables");
  }
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (const auto* m = std::get_if<MonomialObservable>(&spec[k])) {
      if (static_cast<Index>(m->exponents.size()) != n_x) {
        throw ContractViolation("build_custom_dictionary: observable " + std::to_string(k + 1) +
                                " has an exponent vector of the wrong length");
      }
      if (std::any_of(m->exponents.begin(), m->exponents.end(), [](int e) { return e < 0; })) {
        throw ContractViolation("build_custom_dictionary: negative exponent");
      }
      const Index ki = static_cast<Index>(k);
      if (ki == 0 && m->degree() != 0) {
        throw ContractViolation("build_custom_dictionary: first observable must be the constant");
      }
      if (ki >= 1 && ki <= n_x && !is_unit(m->exponents, ki - 1)) {
        throw ContractViolation("build_custom_dictionary: observable " + std::to_string(k + 1) +
                                " must be the coordinate x" + std::to_string(k));
      }
    } else {
      const auto& r = std::get<ReciprocalExponential>(spec[k]);
      if (static_cast<Index>(k) <= n_x) {
        throw ContractViolation(
            "build_custom_dictionary: spec must begin with the constant and coordinates");
      }
      if (r.index < 0 || r.index >= n_x) {
        throw ContractViolation("build_custom_dictionary: reciprocal exponential index out of range");
      }
      if (domain != nullptr) {
        const double lo = domain->lower[r.index] + r.offset;
        const double hi = domain->upper[r.index] + r.offset;
        if (lo <= 0.0 && hi >= 0.0 && !acknowledge_singularity) {
          throw ContractViolation(
              "build_custom_dictionary: exp(1/(x" + std::to_string(r.index + 1) + "+" +
              format_double(r.offset) +
              ")) has its pole inside the state box; set acknowledge_singularity to accept");
        }
      }
    }
  }
  Dictionary d;
  d.n_x_ = n_x;
  d.acknowledge_singularity_ = acknowledge_singularity;
  d.observables_ = std::move(spec);
  d.classify();
  return d;
}

VectorXd generator_action(const Dictionary& dict, const ControlAffineSystem& sys,
                          const ConstVecRef& x, const ConstVecRef& u) {
  if (dict.n_x() != sys.n_x()) throw ContractViolation("generator_action: n_x mismatch");
  return dict.eval_gradient(x) * sys.vector_field(x, u);
}

}  // namespace kmpc
