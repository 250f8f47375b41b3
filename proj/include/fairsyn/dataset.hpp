#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fairsyn {

// One labeled point: nonsensitive features x, binary sensitive attribute s,
// label y in {-1,+1}. The full feature vector is a = (x, s).
struct DataPoint {
  Eigen::VectorXd x;
  int s = 0;
  int y = 1;
};

// Immutable tabular dataset. Rows keep their construction order, so an index
// identifies the same point for the lifetime of the object.
class Dataset {
 public:
  Dataset(Eigen::MatrixXd features, Eigen::VectorXi sensitive, Eigen::VectorXi labels,
          std::vector<std::string> feature_names, std::string sensitive_name,
          std::string label_name);

  std::int64_t size() const { return features_.rows(); }
  Eigen::Index feature_dim() const { return features_.cols(); }  // n-1
  Eigen::Index full_dim() const { return features_.cols() + 1; }  // n

  const Eigen::MatrixXd& features() const { return features_; }
  const Eigen::VectorXi& sensitive() const { return sensitive_; }
  const Eigen::VectorXi& labels() const { return labels_; }

  DataPoint point(std::int64_t i) const;

  // N x n matrix with rows a_i = (x_i, s_i); sensitive attribute last.
  Eigen::MatrixXd design_matrix() const;
  Eigen::VectorXd labels_real() const;

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::string& sensitive_name() const { return sensitive_name_; }
  const std::string& label_name() const { return label_name_; }

  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXi sensitive_;
  Eigen::VectorXi labels_;
  std::vector<std::string> feature_names_;
  std::string sensitive_name_;
  std::string label_name_;
};

// Occupancy of the four (s, y) strata in the fixed order
// (0,-1), (0,+1), (1,-1), (1,+1).
struct StratumProportions {
  std::array<std::int64_t, 4> counts{};

  static int index_of(int s, int y) { return 2 * s + (y > 0 ? 1 : 0); }
  static std::pair<int, int> pair_of(int idx) { return {idx / 2, idx % 2 == 1 ? 1 : -1}; }
  static StratumProportions of(const Dataset& ds);

  std::int64_t total() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
};

// Column-role mapping for delimited text input. Feature columns left empty
// means "every column that is neither sensitive nor label". Cell values are
// canonicalized (trimmed, integral floats collapsed to integers) before the
// value maps are consulted.
struct ColumnSchema {
  std::string sensitive_column;
  std::string label_column;
  std::vector<std::string> feature_columns;
  std::map<std::string, int> sensitive_map = {{"0", 0}, {"1", 1}};
  std::map<std::string, int> label_map = {{"-1", -1}, {"1", 1}, {"+1", 1}};
};

Dataset load_dataset(const std::filesystem::path& path, const ColumnSchema& schema);

// Writes a CSV the loader can read back with the default value maps
// (s in {0,1}, y in {-1,1}).
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

// Per-feature affine transform fitted by standardize(). Population-sd
// convention; constant columns are mapped to zero.
struct StandardizeTransform {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;           // population sd where nonzero
  std::vector<bool> constant;      // true -> column collapses to 0
  std::string sd_convention = "population";

  Dataset apply(const Dataset& ds) const;
};

std::pair<Dataset, StandardizeTransform> standardize(const Dataset& ds);

// Deterministic seeded shuffle followed by an even split; part sizes differ
// by at most one and every row lands in exactly one part.
std::vector<Dataset> partition_clients(const Dataset& ds, int k, std::uint64_t seed);

// Seeded split with train size = round(train_fraction * N).
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed);

// Largest-remainder apportionment of `target` units over nonnegative weights;
// ties on the fractional part break toward the lower index.
std::vector<std::int64_t> largest_remainder(const std::vector<double>& weights,
                                            std::int64_t target);

struct PairAssignment {
  std::vector<std::pair<int, int>> pairs;  // (s, y)
  StratumProportions counts;
  bool dropped_stratum = false;  // target too small to keep every nonempty stratum
};

// Chooses synthetic (s, y) pairs. target_size == N returns the dataset's own
// pairs in row order; otherwise counts follow the dataset's stratum
// proportions under largest-remainder rounding and the output is grouped by
// stratum in the fixed stratum order.
PairAssignment assign_synthetic_pairs(const Dataset& ds, std::int64_t target_size);

// Appends a constant-1 feature named "intercept" (after standardization, by
// convention; the column must not be standardized away).
Dataset append_intercept(const Dataset& ds);

Dataset concatenate(const std::vector<Dataset>& parts);

}  // namespace fairsyn
