#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mhtn/matrix.hpp"

namespace mhtn {

// dot(a,b) / (|a||b|); defined as 0 when either norm is 0.
double cosine_similarity(const Vector& a, const Vector& b);

// AP = (1/R) sum_k (R_k / k) * rel_k over the full gallery; 0 when R == 0.
// Throws if the flags claim more relevant items than R.
double average_precision(const std::vector<int>& relevance, int total_relevant);

// Interpolated precision at the 11 standard recall levels 0.0 .. 1.0,
// averaged over queries.
struct PrCurve {
  std::array<double, 11> recall{};
  std::array<double, 11> precision{};
};

// One modality's embedded testing set.
struct EmbeddedModality {
  std::string modality;
  std::vector<long long> ids;
  std::vector<int> labels;
  Matrix rows;  // one embedding per instance
};

struct TaskResult {
  std::string query_modality;
  std::string gallery_modality;
  double map = 0.0;
  int num_queries = 0;
  PrCurve pr;
};

struct TaskMatrix {
  std::vector<TaskResult> tasks;
  double average = 0.0;  // unweighted mean over tasks
};

// Every query ranks the full gallery by cosine similarity; ties break by
// ascending instance id. Relevance is same-class.
TaskResult evaluate_task(const EmbeddedModality& queries, const EmbeddedModality& gallery);

// All ordered pairs (X -> Y, X != Y).
TaskMatrix evaluate_all(const std::vector<EmbeddedModality>& sets);

void write_results(const std::string& path, const TaskMatrix& results,
                   std::uint64_t seed, std::uint64_t config_digest);

// One file per task: pr_<query>_to_<gallery>.tsv under dir.
void write_pr_curves(const std::string& dir, const TaskMatrix& results,
                     std::uint64_t seed, std::uint64_t config_digest);

}  // namespace mhtn
