#ifndef AGGWASS_MODEL_IO_HPP
#define AGGWASS_MODEL_IO_HPP

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"
#include "gaussian.hpp"
#include "hmm.hpp"

namespace aggwass {

// Model document: {"states", "dim", "transition" (row-major, states^2),
// "means" (per state, dim), "covariances" (per state, row-major dim^2),
// "stationary" (optional; checked against the recomputed distribution)}.

namespace detail {

inline std::vector<double> row_major(const Eigen::MatrixXd& a) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) v.push_back(a(r, c));
  return v;
}

inline std::vector<double> number_array(const nlohmann::json& j, const std::string& field,
                                        std::size_t expected) {
  if (!j.is_array()) throw ParseError("field " + field + ": expected an array");
  if (j.size() != expected)
    throw ParseError("field " + field + ": expected " + std::to_string(expected) +
                     " numbers, got " + std::to_string(j.size()));
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError("field " + field + ": non-numeric entry");
    v.push_back(x.get<double>());
  }
  return v;
}

inline Eigen::MatrixXd from_row_major(const std::vector<double>& v, Eigen::Index rows,
                                      Eigen::Index cols) {
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return a;
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(std::string("missing field ") + name);
  return *it;
}

inline Eigen::Index positive_count(const nlohmann::json& j, const char* name) {
  const auto& f = field(j, name);
  if (!f.is_number_integer() || f.get<long long>() < 1)
    throw ParseError(std::string("field ") + name + ": expected an integer >= 1");
  return static_cast<Eigen::Index>(f.get<long long>());
}

}  // namespace detail

inline nlohmann::json model_to_json(const GmmHmm& h) {
  nlohmann::json j;
  j["states"] = h.states();
  j["dim"] = h.dim();
  j["transition"] = detail::row_major(h.trans().matrix());
  nlohmann::json means = nlohmann::json::array(), covs = nlohmann::json::array();
  for (const auto& g : h.emissions()) {
    means.push_back(std::vector<double>(g.mean().data(), g.mean().data() + g.dim()));
    covs.push_back(detail::row_major(g.cov()));
  }
  j["means"] = std::move(means);
  j["covariances"] = std::move(covs);
  j["stationary"] = std::vector<double>(h.stationary().data(),
                                        h.stationary().data() + h.states());
  return j;
}

/// Builds and validates a model; InvalidInput from validation names the invariant.
inline GmmHmm model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("model document must be an object");
  const Eigen::Index m = detail::positive_count(j, "states");
  const Eigen::Index d = detail::positive_count(j, "dim");
  const auto mu = static_cast<std::size_t>(m), du = static_cast<std::size_t>(d);
  const Eigen::MatrixXd t =
      detail::from_row_major(detail::number_array(detail::field(j, "transition"), "transition", mu * mu), m, m);
  const auto& means = detail::field(j, "means");
  const auto& covs = detail::field(j, "covariances");
  if (!means.is_array() || means.size() != mu)
    throw ParseError("field means: expected one entry per state");
  if (!covs.is_array() || covs.size() != mu)
    throw ParseError("field covariances: expected one entry per state");
  std::vector<Gaussian> em;
  for (std::size_t k = 0; k < mu; ++k) {
    const auto mean = detail::number_array(means[k], "means[" + std::to_string(k) + "]", du);
    const auto cov =
        detail::number_array(covs[k], "covariances[" + std::to_string(k) + "]", du * du);
    em.emplace_back(Eigen::Map<const Eigen::VectorXd>(mean.data(), d),
                    detail::from_row_major(cov, d, d));
  }
  TransitionMatrix trans(t);
  GmmHmm h(trans, std::move(em));
  if (auto it = j.find("stationary"); it != j.end()) {
    const auto pi = detail::number_array(*it, "stationary", mu);
    for (std::size_t k = 0; k < mu; ++k)
      if (std::abs(pi[k] - h.stationary()(static_cast<Eigen::Index>(k))) > kStationaryTol)
        throw InvalidInput("field stationary: does not match the stationary distribution of "
                           "transition at state " + std::to_string(k));
  }
  return h;
}

inline std::string save_model_string(const GmmHmm& h) { return model_to_json(h).dump(2) + "\n"; }

inline GmmHmm load_model_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what());
  }
  return model_from_json(j);
}

inline GmmHmm load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_model_string(ss.str());
}

inline void save_model(const GmmHmm& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write model file " + path);
  out << save_model_string(h);
}

}  // namespace aggwass

#endif
