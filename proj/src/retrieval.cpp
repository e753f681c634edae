#include "mhtn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "mhtn/checkpoint.hpp"
#include "mhtn/errors.hpp"

namespace mhtn {

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw UsageError("cosine: vectors differ in dimension");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double average_precision(const std::vector<int>& relevance, int total_relevant) {
  if (total_relevant < 0) throw UsageError("AP: negative relevant count");
  int seen = 0;
  double ap = 0.0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (relevance[k]) {
      ++seen;
      ap += static_cast<double>(seen) / static_cast<double>(k + 1);
    }
  }
  if (seen > total_relevant)
    throw UsageError("AP: relevance flags mark " + std::to_string(seen) +
                     " items but only " + std::to_string(total_relevant) + " exist");
  if (total_relevant == 0) return 0.0;
  return ap / static_cast<double>(total_relevant);
}

TaskResult evaluate_task(const EmbeddedModality& queries, const EmbeddedModality& gallery) {
  if (queries.rows.rows() == 0 || gallery.rows.rows() == 0)
    throw ConfigError("retrieval task has an empty query or gallery set");
  if (queries.rows.cols() != gallery.rows.cols())
    throw ConfigError("query and gallery embeddings differ in dimension");

  TaskResult out;
  out.query_modality = queries.modality;
  out.gallery_modality = gallery.modality;
  out.num_queries = static_cast<int>(queries.rows.rows());

  std::array<double, 11> prec_sums{};
  int pr_queries = 0;
  double ap_sum = 0.0;
  Eigen::Index n = gallery.rows.rows();

  for (Eigen::Index q = 0; q < queries.rows.rows(); ++q) {
    Vector qv = queries.rows.row(q).transpose();
    std::vector<std::pair<double, std::size_t>> ranked(static_cast<std::size_t>(n));
    for (Eigen::Index g = 0; g < n; ++g)
      ranked[static_cast<std::size_t>(g)] = {
          cosine_similarity(qv, gallery.rows.row(g).transpose()),
          static_cast<std::size_t>(g)};
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return gallery.ids[a.second] < gallery.ids[b.second];
    });

    int qlabel = queries.labels[static_cast<std::size_t>(q)];
    std::vector<int> rel(static_cast<std::size_t>(n));
    int total_relevant = 0;
    for (std::size_t k = 0; k < rel.size(); ++k) {
      rel[k] = gallery.labels[ranked[k].second] == qlabel ? 1 : 0;
      total_relevant += rel[k];
    }
    ap_sum += average_precision(rel, total_relevant);

    if (total_relevant > 0) {
      // Interpolated precision: best precision at any recall >= level.
      std::vector<double> prec(rel.size()), recall(rel.size());
      int seen = 0;
      for (std::size_t k = 0; k < rel.size(); ++k) {
        seen += rel[k];
        prec[k] = static_cast<double>(seen) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(seen) / static_cast<double>(total_relevant);
      }
      for (std::size_t k = rel.size() - 1; k > 0; --k)
        prec[k - 1] = std::max(prec[k - 1], prec[k]);
      for (int lv = 0; lv <= 10; ++lv) {
        double level = lv / 10.0;
        double best = 0.0;
        for (std::size_t k = 0; k < rel.size(); ++k)
          if (recall[k] + 1e-12 >= level) {
            best = prec[k];
            break;
          }
        prec_sums[static_cast<std::size_t>(lv)] += best;
      }
      ++pr_queries;
    }
  }

  out.map = ap_sum / static_cast<double>(out.num_queries);
  for (int lv = 0; lv <= 10; ++lv) {
    out.pr.recall[static_cast<std::size_t>(lv)] = lv / 10.0;
    out.pr.precision[static_cast<std::size_t>(lv)] =
        pr_queries > 0 ? prec_sums[static_cast<std::size_t>(lv)] / pr_queries : 0.0;
  }
  return out;
}

TaskMatrix evaluate_all(const std::vector<EmbeddedModality>& sets) {
  if (sets.size() < 2)
    throw ConfigError("retrieval needs at least two embedded modalities");
  TaskMatrix out;
  for (const auto& q : sets)
    for (const auto& g : sets) {
      if (q.modality == g.modality) continue;
      out.tasks.push_back(evaluate_task(q, g));
    }
  double sum = 0.0;
  for (const auto& t : out.tasks) sum += t.map;
  out.average = sum / static_cast<double>(out.tasks.size());
  return out;
}

void write_results(const std::string& path, const TaskMatrix& results,
                   std::uint64_t seed, std::uint64_t config_digest) {
  std::ostringstream out;
  out << "# seed " << seed << "\n";
  out << "# config " << std::hex << config_digest << std::dec << "\n";
  out << "query\tgallery\tmap\tqueries\n";
  char buf[32];
  int total_queries = 0;
  for (const auto& t : results.tasks) {
    std::snprintf(buf, sizeof(buf), "%.6f", t.map);
    out << t.query_modality << "\t" << t.gallery_modality << "\t" << buf << "\t"
        << t.num_queries << "\n";
    total_queries += t.num_queries;
  }
  std::snprintf(buf, sizeof(buf), "%.6f", results.average);
  out << "average\tall\t" << buf << "\t" << total_queries << "\n";
  atomic_write(path, out.str());
}

void write_pr_curves(const std::string& dir, const TaskMatrix& results,
                     std::uint64_t seed, std::uint64_t config_digest) {
  for (const auto& t : results.tasks) {
    std::ostringstream out;
    out << "# seed " << seed << "\n";
    out << "# config " << std::hex << config_digest << std::dec << "\n";
    out << "recall\tprecision\n";
    char buf[32];
    for (std::size_t i = 0; i < t.pr.recall.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.1f", t.pr.recall[i]);
      out << buf;
      std::snprintf(buf, sizeof(buf), "%.6f", t.pr.precision[i]);
      out << "\t" << buf << "\n";
    }
    std::string path = (std::filesystem::path(dir) /
                        ("pr_" + t.query_modality + "_to_" + t.gallery_modality + ".tsv"))
                           .string();
    atomic_write(path, out.str());
  }
}

}  // namespace mhtn
