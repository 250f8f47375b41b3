#include "fairsyn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fairsyn/rng.hpp"

namespace fairsyn {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

// "1.0" and "1" should hit the same value-map entry.
std::string canonical_cell(const std::string& raw) {
  std::string cell = trim(raw);
  if (cell.empty()) return cell;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != nullptr && *end == '\0' && std::isfinite(v) && v == std::floor(v) &&
      std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  return cell;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, delim)) cells.push_back(cell);
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

}  // namespace

Dataset::Dataset(Eigen::MatrixXd features, Eigen::VectorXi sensitive, Eigen::VectorXi labels,
                 std::vector<std::string> feature_names, std::string sensitive_name,
                 std::string label_name)
    : features_(std::move(features)),
      sensitive_(std::move(sensitive)),
      labels_(std::move(labels)),
      feature_names_(std::move(feature_names)),
      sensitive_name_(std::move(sensitive_name)),
      label_name_(std::move(label_name)) {
  if (features_.rows() == 0) throw std::invalid_argument("dataset: zero rows");
  if (sensitive_.size() != features_.rows() || labels_.size() != features_.rows()) {
    throw std::invalid_argument("dataset: column lengths disagree");
  }
  if (static_cast<Eigen::Index>(feature_names_.size()) != features_.cols()) {
    throw std::invalid_argument("dataset: feature name count disagrees with columns");
  }
  for (Eigen::Index i = 0; i < sensitive_.size(); ++i) {
    if (sensitive_[i] != 0 && sensitive_[i] != 1) {
      throw std::invalid_argument("dataset: sensitive value outside {0,1}");
    }
    if (labels_[i] != -1 && labels_[i] != 1) {
      throw std::invalid_argument("dataset: label outside {-1,+1}");
    }
  }
}

DataPoint Dataset::point(std::int64_t i) const {
  return DataPoint{features_.row(i).transpose(), sensitive_[i], labels_[i]};
}

Eigen::MatrixXd Dataset::design_matrix() const {
  Eigen::MatrixXd a(features_.rows(), features_.cols() + 1);
  a.leftCols(features_.cols()) = features_;
  a.col(features_.cols()) = sensitive_.cast<double>();
  return a;
}

Eigen::VectorXd Dataset::labels_real() const { return labels_.cast<double>(); }

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Eigen::MatrixXd x(indices.size(), features_.cols());
  Eigen::VectorXi s(indices.size());
  Eigen::VectorXi y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    x.row(r) = features_.row(indices[r]);
    s[r] = sensitive_[indices[r]];
    y[r] = labels_[indices[r]];
  }
  return Dataset(std::move(x), std::move(s), std::move(y), feature_names_, sensitive_name_,
                 label_name_);
}

StratumProportions StratumProportions::of(const Dataset& ds) {
  StratumProportions p;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    ++p.counts[index_of(ds.sensitive()[i], ds.labels()[i])];
  }
  return p;
}

Dataset load_dataset(const std::filesystem::path& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_dataset: empty file");
  const std::vector<std::string> header = split_line(line, ',');

  std::map<std::string, std::size_t> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) col_index[trim(header[i])] = i;

  const auto find_col = [&](const std::string& name, const char* role) {
    const auto it = col_index.find(name);
    if (it == col_index.end()) {
      throw std::runtime_error(std::string("load_dataset: missing ") + role + " column '" +
                               name + "'");
    }
    return it->second;
  };
  const std::size_t sensitive_col = find_col(schema.sensitive_column, "sensitive");
  const std::size_t label_col = find_col(schema.label_column, "label");

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i == sensitive_col || i == label_col) continue;
      feature_cols.push_back(i);
      feature_names.push_back(trim(header[i]));
    }
  } else {
    for (const std::string& name : schema.feature_columns) {
      feature_cols.push_back(find_col(name, "feature"));
      feature_names.push_back(name);
    }
  }

  std::vector<std::vector<double>> feature_rows;
  std::vector<int> sensitive_vals;
  std::vector<int> label_vals;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_line(line, ',');
    if (cells.size() != header.size()) {
      throw std::runtime_error("load_dataset: ragged row at line " + std::to_string(line_no));
    }

    const std::string s_cell = canonical_cell(cells[sensitive_col]);
    const auto s_it = schema.sensitive_map.find(s_cell);
    if (s_it == schema.sensitive_map.end()) {
      throw std::runtime_error("load_dataset: unmapped sensitive value '" + s_cell +
                               "' at line " + std::to_string(line_no));
    }
    const std::string y_cell = canonical_cell(cells[label_col]);
    const auto y_it = schema.label_map.find(y_cell);
    if (y_it == schema.label_map.end()) {
      throw std::runtime_error("load_dataset: unmapped label value '" + y_cell + "' at line " +
                               std::to_string(line_no));
    }

    std::vector<double> row(feature_cols.size());
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      const std::string cell = trim(cells[feature_cols[j]]);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end == nullptr || *end != '\0' || !std::isfinite(v)) {
        throw std::runtime_error("load_dataset: non-numeric feature '" + cell + "' in column '" +
                                 feature_names[j] + "' at line " + std::to_string(line_no));
      }
      row[j] = v;
    }
    feature_rows.push_back(std::move(row));
    sensitive_vals.push_back(s_it->second);
    label_vals.push_back(y_it->second);
  }
  if (feature_rows.empty()) throw std::runtime_error("load_dataset: no data rows");

  Eigen::MatrixXd x(feature_rows.size(), feature_cols.size());
  Eigen::VectorXi s(feature_rows.size());
  Eigen::VectorXi y(feature_rows.size());
  for (std::size_t i = 0; i < feature_rows.size(); ++i) {
    for (std::size_t j = 0; j < feature_cols.size(); ++j) x(i, j) = feature_rows[i][j];
    s[i] = sensitive_vals[i];
    y[i] = label_vals[i];
  }
  return Dataset(std::move(x), std::move(s), std::move(y), std::move(feature_names),
                 trim(header[sensitive_col]), trim(header[label_col]));
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot write " + path.string());
  for (std::size_t j = 0; j < ds.feature_names().size(); ++j) {
    out << ds.feature_names()[j] << ',';
  }
  out << ds.sensitive_name() << ',' << ds.label_name() << '\n';
  char buf[64];
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.feature_dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features()(i, j));
      out << buf << ',';
    }
    out << ds.sensitive()[i] << ',' << ds.labels()[i] << '\n';
  }
}

Dataset StandardizeTransform::apply(const Dataset& ds) const {
  if (ds.feature_dim() != mean.size()) {
    throw std::invalid_argument("standardize transform: dimension mismatch");
  }
  Eigen::MatrixXd x = ds.features();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (constant[j]) {
      x.col(j).setZero();
    } else {
      x.col(j) = (x.col(j).array() - mean[j]) / scale[j];
    }
  }
  return Dataset(std::move(x), ds.sensitive(), ds.labels(), ds.feature_names(),
                 ds.sensitive_name(), ds.label_name());
}

std::pair<Dataset, StandardizeTransform> standardize(const Dataset& ds) {
  const Eigen::MatrixXd& x = ds.features();
  const double n = static_cast<double>(x.rows());

  StandardizeTransform t;
  t.mean = x.colwise().mean();
  t.scale = Eigen::VectorXd::Ones(x.cols());
  t.constant.assign(x.cols(), false);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - t.mean[j]).square().sum() / n;
    if (var <= 0.0) {
      t.constant[j] = true;
    } else {
      t.scale[j] = std::sqrt(var);
    }
  }
  return {t.apply(ds), std::move(t)};
}

std::vector<Dataset> partition_clients(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("partition_clients: k must be >= 1");
  if (static_cast<std::int64_t>(k) > ds.size()) {
    throw std::invalid_argument("partition_clients: more clients than data points");
  }
  Rng rng(seed);
  const std::vector<std::size_t> order = rng.permutation(ds.size());

  const std::int64_t n = ds.size();
  const std::int64_t base = n / k;
  const std::int64_t extra = n % k;  // first `extra` parts get one more row
  std::vector<Dataset> parts;
  parts.reserve(k);
  std::int64_t offset = 0;
  for (int c = 0; c < k; ++c) {
    const std::int64_t len = base + (c < extra ? 1 : 0);
    std::vector<std::size_t> idx(order.begin() + offset, order.begin() + offset + len);
    parts.push_back(ds.subset(idx));
    offset += len;
  }
  return parts;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_test_split: fraction must be in (0,1)");
  }
  const std::int64_t n = ds.size();
  const std::int64_t train_n =
      static_cast<std::int64_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (train_n == 0 || train_n == n) {
    throw std::invalid_argument("train_test_split: a side would be empty");
  }
  Rng rng(seed);
  const std::vector<std::size_t> order = rng.permutation(n);
  const std::vector<std::size_t> train_idx(order.begin(), order.begin() + train_n);
  const std::vector<std::size_t> test_idx(order.begin() + train_n, order.end());
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

std::vector<std::int64_t> largest_remainder(const std::vector<double>& weights,
                                            std::int64_t target) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0.0) throw std::invalid_argument("largest_remainder: weights sum to zero");

  std::vector<std::int64_t> out(weights.size(), 0);
  std::vector<double> remainders(weights.size(), 0.0);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = weights[i] / total * static_cast<double>(target);
    out[i] = static_cast<std::int64_t>(std::floor(quota));
    remainders[i] = quota - std::floor(quota);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t r = 0; assigned < target; ++r) {
    out[order[r % order.size()]] += 1;
    ++assigned;
  }
  return out;
}

PairAssignment assign_synthetic_pairs(const Dataset& ds, std::int64_t target_size) {
  if (target_size < 1 || target_size > ds.size()) {
    throw std::invalid_argument("assign_synthetic_pairs: target size outside [1, N]");
  }

  PairAssignment result;
  if (target_size == ds.size()) {
    // N_s = N keeps the dataset's own pairs, in row order.
    result.pairs.reserve(ds.size());
    for (std::int64_t i = 0; i < ds.size(); ++i) {
      result.pairs.emplace_back(ds.sensitive()[i], ds.labels()[i]);
    }
    result.counts = StratumProportions::of(ds);
    return result;
  }

  const StratumProportions input = StratumProportions::of(ds);
  const std::vector<double> weights(input.counts.begin(), input.counts.end());
  const std::vector<std::int64_t> alloc = largest_remainder(weights, target_size);

  int nonempty = 0;
  for (int k = 0; k < 4; ++k) {
    result.counts.counts[k] = alloc[k];
    if (input.counts[k] > 0) ++nonempty;
    if (input.counts[k] > 0 && alloc[k] == 0) result.dropped_stratum = true;
  }
  if (target_size < nonempty) result.dropped_stratum = true;

  for (int k = 0; k < 4; ++k) {
    const auto [s, y] = StratumProportions::pair_of(k);
    for (std::int64_t c = 0; c < alloc[k]; ++c) result.pairs.emplace_back(s, y);
  }
  return result;
}

Dataset append_intercept(const Dataset& ds) {
  Eigen::MatrixXd x(ds.size(), ds.feature_dim() + 1);
  x.leftCols(ds.feature_dim()) = ds.features();
  x.col(ds.feature_dim()).setOnes();
  std::vector<std::string> names = ds.feature_names();
  names.emplace_back("intercept");
  return Dataset(std::move(x), ds.sensitive(), ds.labels(), std::move(names),
                 ds.sensitive_name(), ds.label_name());
}

Dataset concatenate(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw std::invalid_argument("concatenate: no parts");
  std::int64_t total = 0;
  for (const Dataset& p : parts) {
    if (p.feature_dim() != parts.front().feature_dim()) {
      throw std::invalid_argument("concatenate: dimension mismatch");
    }
    total += p.size();
  }
  Eigen::MatrixXd x(total, parts.front().feature_dim());
  Eigen::VectorXi s(total);
  Eigen::VectorXi y(total);
  std::int64_t offset = 0;
  for (const Dataset& p : parts) {
    x.middleRows(offset, p.size()) = p.features();
    s.segment(offset, p.size()) = p.sensitive();
    y.segment(offset, p.size()) = p.labels();
    offset += p.size();
  }
  return Dataset(std::move(x), std::move(s), std::move(y), parts.front().feature_names(),
                 parts.front().sensitive_name(), parts.front().label_name());
}

}  // namespace fairsyn
