#include "jsfusion/evaluation.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace jsfusion {

void ScoreMatrix::validate() const {
  if (static_cast<Index>(gt.size()) != scores.rows()) {
    throw InputError("score matrix has " + std::to_string(scores.rows()) + " rows but " + std::to_string(gt.size()) +
                     " ground-truth entries");
  }
  if (!scores.allFinite()) throw InputError("score matrix has non-finite entries");
  for (Index g : gt) {
    if (g < 0 || g >= scores.cols()) {
      throw InputError("ground-truth column " + std::to_string(g) + " outside [0, " + std::to_string(scores.cols()) + ")");
    }
  }
}

Index rank_of_gt(const Eigen::Ref<const Eigen::VectorXd>& row, Index gt) {
  if (gt < 0 || gt >= row.size()) {
    throw InputError("ground-truth index " + std::to_string(gt) + " outside [0, " + std::to_string(row.size()) + ")");
  }
  double s = row[gt];
  Index rank = 1;
  for (Index l = 0; l < row.size(); ++l) {
    if (row[l] > s || (l < gt && row[l] == s)) ++rank;
  }
  return rank;
}

double recall_at_k(const std::vector<Index>& ranks, Index k) {
  if (ranks.empty()) throw InputError("recall@k of an empty rank list");
  Index hits = 0;
  for (Index r : ranks) {
    if (r < 1) throw InputError("rank " + std::to_string(r) + " below 1");
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double median_rank(const std::vector<Index>& ranks) {
  if (ranks.empty()) throw InputError("median of an empty rank list");
  std::vector<Index> s = ranks;
  std::sort(s.begin(), s.end());
  std::size_t n = s.size();
  if (n % 2 == 1) return static_cast<double>(s[n / 2]);
  return 0.5 * (static_cast<double>(s[n / 2 - 1]) + static_cast<double>(s[n / 2]));
}

RetrievalMetrics retrieval_metrics(const ScoreMatrix& m, const std::vector<Index>& ks) {
  m.validate();
  RetrievalMetrics out;
  out.queries = m.scores.rows();
  out.pool = m.scores.cols();
  for (Index k = 0; k < m.scores.rows(); ++k) {
    out.ranks.push_back(rank_of_gt(m.scores.row(k).transpose(), m.gt[static_cast<std::size_t>(k)]));
  }
  for (Index k : ks) out.recall_at[k] = recall_at_k(out.ranks, k);
  out.median_rank = median_rank(out.ranks);
  return out;
}

AccuracyReport accuracy_report(std::string task, std::vector<Index> predictions, std::vector<Index> answers) {
  if (predictions.size() != answers.size()) throw InputError("prediction and answer counts differ");
  if (answers.empty()) throw InputError(task + ": no items to evaluate");
  AccuracyReport r;
  r.task = std::move(task);
  r.items = static_cast<Index>(answers.size());
  Index correct = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) correct += predictions[i] == answers[i] ? 1 : 0;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.items);
  r.predictions = std::move(predictions);
  r.answers = std::move(answers);
  return r;
}

std::string metrics_json(const RetrievalMetrics& m) {
  nlohmann::ordered_json j;
  j["task"] = "retrieval";
  j["queries"] = m.queries;
  j["pool"] = m.pool;
  for (const auto& [k, v] : m.recall_at) j["recall@" + std::to_string(k)] = v;
  j["median_rank"] = m.median_rank;
  j["ranks"] = m.ranks;
  return j.dump(2) + "\n";
}

std::string metrics_json(const AccuracyReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["items"] = r.items;
  j["accuracy"] = r.accuracy;
  j["predictions"] = r.predictions;
  j["answers"] = r.answers;
  return j.dump(2) + "\n";
}

std::string metrics_table(const RetrievalMetrics& m) {
  std::string head = "Model     ", row = "JSFusion  ";
  char buf[32];
  for (const auto& [k, v] : m.recall_at) {
    std::snprintf(buf, sizeof buf, "%8s", ("R@" + std::to_string(k)).c_str());
    head += buf;
    std::snprintf(buf, sizeof buf, "%8.1f", 100.0 * v);
    row += buf;
  }
  head += "    MedR";
  std::snprintf(buf, sizeof buf, "%8.1f", m.median_rank);
  row += buf;
  return head + "\n" + row + "\n(" + std::to_string(m.queries) + " queries, pool of " + std::to_string(m.pool) + ")\n";
}

std::string metrics_table(const AccuracyReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "Model     %20s\nJSFusion  %20.2f\n", r.task.c_str(), 100.0 * r.accuracy);
  return std::string(buf) + "(" + std::to_string(r.items) + " items)\n";
}

}  // namespace jsfusion
