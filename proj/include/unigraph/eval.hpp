#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "unigraph/matrix.hpp"
#include "unigraph/rng.hpp"

namespace unigraph {

// Embedding/label pairs with train/valid/test row-index splits; labels are
// class indices into `classes` (sorted lexicographically).
struct EmbDataset {
  Matrix embeddings;        // n x d
  std::vector<int> labels;  // n, index into classes
  std::vector<std::string> classes;
  std::vector<int> train, valid, test;  // row indices

  int dim() const { return embeddings.cols(); }
};

inline EmbDataset make_emb_dataset(const Matrix& embeddings, const std::vector<std::string>& label_strings,
                                   const std::vector<int>& train, const std::vector<int>& valid,
                                   const std::vector<int>& test) {
  if (embeddings.rows() != static_cast<int>(label_strings.size()))
    throw std::invalid_argument("embedding/label count mismatch");
  EmbDataset ds;
  ds.embeddings = embeddings;
  std::map<std::string, int> index;
  for (const auto& l : label_strings)
    if (!l.empty()) index.emplace(l, 0);
  int next = 0;
  for (auto& [name, id] : index) id = next++;
  for (auto& [name, id] : index) ds.classes.push_back(name);
  ds.labels.reserve(label_strings.size());
  for (const auto& l : label_strings) ds.labels.push_back(l.empty() ? -1 : index.at(l));
  ds.train = train;
  ds.valid = valid;
  ds.test = test;
  return ds;
}

// ---- few-shot in-context evaluation --------------------------------------------

struct FewShotTask {
  int ways = 0;
  int shots = 0;
  std::vector<std::pair<std::vector<double>, int>> support;  // exactly ways * shots
  std::vector<std::pair<std::vector<double>, int>> query;    // labels within the sampled ways
  std::vector<int> class_ids;                                // sampled dataset class per way index
};

struct FewShotDefaults {
  int num_tasks = 500;
  int shots = 3;
  int query_cap = 50;
};

// Support examples come from the train split (K per sampled class), queries
// from the test split of the same classes, capped per task. Seeded and
// reproducible; support and query never share an example by construction.
inline std::vector<FewShotTask> sample_fewshot_tasks(const EmbDataset& ds, int ways, int shots, int num_tasks,
                                                     std::uint64_t seed, int query_cap = 50) {
  if (ways < 1 || shots < 1 || num_tasks < 1) throw std::invalid_argument("bad few-shot parameters");

  std::map<int, std::vector<int>> train_by_class, test_by_class;
  for (int r : ds.train)
    if (ds.labels[r] >= 0) train_by_class[ds.labels[r]].push_back(r);
  for (int r : ds.test)
    if (ds.labels[r] >= 0) test_by_class[ds.labels[r]].push_back(r);

  std::vector<int> eligible;
  for (auto& [c, rows] : train_by_class)
    if (static_cast<int>(rows.size()) >= shots && test_by_class.count(c)) eligible.push_back(c);
  if (static_cast<int>(eligible.size()) < ways)
    throw std::invalid_argument("not enough classes with " + std::to_string(shots) + " train examples: have " +
                                std::to_string(eligible.size()) + ", need " + std::to_string(ways));

  auto embed_row = [&](int r) {
    std::vector<double> v(ds.dim());
    for (int j = 0; j < ds.dim(); ++j) v[j] = ds.embeddings(r, j);
    return v;
  };

  std::vector<FewShotTask> tasks;
  tasks.reserve(num_tasks);
  for (int task_i = 0; task_i < num_tasks; ++task_i) {
    Rng rng(mix_seed(seed, 7000 + static_cast<std::uint64_t>(task_i)));
    std::vector<int> classes = eligible;
    rng.shuffle(classes);
    classes.resize(ways);

    FewShotTask task;
    task.ways = ways;
    task.shots = shots;
    task.class_ids = classes;
    std::vector<std::pair<std::vector<double>, int>> queries;
    for (int w = 0; w < ways; ++w) {
      std::vector<int> pool = train_by_class.at(classes[w]);
      rng.shuffle(pool);
      for (int k = 0; k < shots; ++k) task.support.emplace_back(embed_row(pool[k]), w);
      for (int r : test_by_class.at(classes[w])) queries.emplace_back(embed_row(r), w);
    }
    rng.shuffle(queries);
    if (query_cap > 0 && static_cast<int>(queries.size()) > query_cap) queries.resize(query_cap);
    task.query = std::move(queries);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

struct PrototypeResult {
  std::vector<int> predicted;  // way index per query
  double accuracy = 0.0;
  int zero_norm_warnings = 0;
};

// Per-class mean prototype; queries go to the argmax-cosine prototype. Ties
// break toward the lowest class index; zero-norm pairs score -inf.
inline PrototypeResult prototype_classify(const FewShotTask& task) {
  if (task.support.empty()) throw std::invalid_argument("empty support set");
  const int d = static_cast<int>(task.support[0].first.size());

  std::vector<std::vector<double>> prototypes(task.ways, std::vector<double>(d, 0.0));
  std::vector<int> counts(task.ways, 0);
  for (const auto& [h, y] : task.support) {
    for (int j = 0; j < d; ++j) prototypes[y][j] += h[j];
    ++counts[y];
  }
  for (int c = 0; c < task.ways; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("support missing class " + std::to_string(c));
    for (int j = 0; j < d; ++j) prototypes[c][j] /= counts[c];
  }

  PrototypeResult out;
  int correct = 0;
  for (const auto& [h, y] : task.query) {
    double hn = 0.0;
    for (double v : h) hn += v * v;
    hn = std::sqrt(hn);
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < task.ways; ++c) {
      double pn = 0.0, dot = 0.0;
      for (int j = 0; j < d; ++j) {
        pn += prototypes[c][j] * prototypes[c][j];
        dot += h[j] * prototypes[c][j];
      }
      pn = std::sqrt(pn);
      double score;
      if (hn == 0.0 || pn == 0.0) {
        score = -std::numeric_limits<double>::infinity();
        ++out.zero_norm_warnings;
      } else {
        score = dot / (hn * pn);
      }
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    out.predicted.push_back(best);
    if (best == y) ++correct;
  }
  out.accuracy = task.query.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(task.query.size());
  return out;
}

struct FewShotReport {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over tasks
  int ways = 0;
  int shots = 0;
  int num_tasks = 0;

  nlohmann::json to_json() const {
    return {{"mean", mean}, {"std", stddev}, {"N", ways}, {"K", shots}, {"num_tasks", num_tasks}};
  }
};

inline FewShotReport fewshot_report(const std::vector<FewShotTask>& tasks) {
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  std::vector<double> accs;
  accs.reserve(tasks.size());
  for (const auto& t : tasks) accs.push_back(prototype_classify(t).accuracy);
  FewShotReport r;
  r.ways = tasks[0].ways;
  r.shots = tasks[0].shots;
  r.num_tasks = static_cast<int>(tasks.size());
  for (double a : accs) r.mean += a;
  r.mean /= accs.size();
  if (accs.size() > 1) {
    double ss = 0.0;
    for (double a : accs) ss += (a - r.mean) * (a - r.mean);
    r.stddev = std::sqrt(ss / (accs.size() - 1));
  }
  return r;
}

// ---- linear probing -------------------------------------------------------------

struct ProbeConfig {
  double lr = 0.01;
  int epochs = 5000;
  int patience = 200;    // validation checks without improvement
  int eval_every = 10;   // epochs between validation checks
  bool bias = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (lr <= 0.0 || epochs < 1 || patience < 1 || eval_every < 1)
      throw std::invalid_argument("probe config values must be positive");
  }
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double valid_accuracy = 0.0;
  double final_train_loss = 0.0;
  Matrix weights;              // d x classes
  std::vector<double> bias;
  std::vector<std::string> classes;
  std::vector<double> train_loss_curve;
};

namespace detail {

inline double probe_accuracy(const Matrix& x, const std::vector<int>& labels, const std::vector<int>& rows,
                             const Matrix& w, const std::vector<double>& b) {
  if (rows.empty()) return 0.0;
  int correct = 0;
  for (int r : rows) {
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < w.cols(); ++c) {
      double v = b[c];
      for (int j = 0; j < x.cols(); ++j) v += x(r, j) * w(j, c);
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    if (best == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace detail

// Full-batch softmax regression on frozen embeddings, Adam at cfg.lr for
// cfg.epochs with early stopping on validation accuracy. Returns the test
// accuracy of the best-validation checkpoint.
inline ProbeResult linear_probe(const EmbDataset& ds, const ProbeConfig& cfg) {
  cfg.validate();
  if (ds.train.empty()) throw std::invalid_argument("empty train split");
  const int d = ds.dim();
  const int num_classes = static_cast<int>(ds.classes.size());
  if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  for (int r : ds.train)
    if (ds.labels[r] < 0) throw std::invalid_argument("unlabeled train row");

  Matrix w(d, num_classes), m_w(d, num_classes), v_w(d, num_classes);
  std::vector<double> b(num_classes, 0.0), m_b(num_classes, 0.0), v_b(num_classes, 0.0);

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double inv_n = 1.0 / static_cast<double>(ds.train.size());

  ProbeResult best;
  best.valid_accuracy = -1.0;
  int checks_since_best = 0;
  ProbeResult out;
  out.classes = ds.classes;

  Matrix gw(d, num_classes);
  std::vector<double> gb(num_classes), probs(num_classes);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    gw.zero();
    std::fill(gb.begin(), gb.end(), 0.0);
    double loss = 0.0;
    for (int r : ds.train) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < num_classes; ++c) {
        double z = b[c];
        for (int j = 0; j < d; ++j) z += ds.embeddings(r, j) * w(j, c);
        probs[c] = z;
        mx = std::max(mx, z);
      }
      double sum = 0.0;
      for (int c = 0; c < num_classes; ++c) {
        probs[c] = std::exp(probs[c] - mx);
        sum += probs[c];
      }
      const int y = ds.labels[r];
      loss += -std::log(probs[y] / sum);
      for (int c = 0; c < num_classes; ++c) {
        const double delta = (probs[c] / sum - (c == y ? 1.0 : 0.0)) * inv_n;
        gb[c] += delta;
        for (int j = 0; j < d; ++j) gw(j, c) += delta * ds.embeddings(r, j);
      }
    }
    loss *= inv_n;
    out.train_loss_curve.push_back(loss);

    const double bc1 = 1.0 - std::pow(beta1, epoch);
    const double bc2 = 1.0 - std::pow(beta2, epoch);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_w.data()[i] = beta1 * m_w.data()[i] + (1 - beta1) * gw.data()[i];
      v_w.data()[i] = beta2 * v_w.data()[i] + (1 - beta2) * gw.data()[i] * gw.data()[i];
      w.data()[i] -= cfg.lr * (m_w.data()[i] / bc1) / (std::sqrt(v_w.data()[i] / bc2) + eps);
    }
    if (cfg.bias) {
      for (int c = 0; c < num_classes; ++c) {
        m_b[c] = beta1 * m_b[c] + (1 - beta1) * gb[c];
        v_b[c] = beta2 * v_b[c] + (1 - beta2) * gb[c] * gb[c];
        b[c] -= cfg.lr * (m_b[c] / bc1) / (std::sqrt(v_b[c] / bc2) + eps);
      }
    }

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      const std::vector<int>& val_rows = ds.valid.empty() ? ds.train : ds.valid;
      const double vacc = detail::probe_accuracy(ds.embeddings, ds.labels, val_rows, w, b);
      if (vacc > best.valid_accuracy) {
        best.valid_accuracy = vacc;
        best.weights = w;
        best.bias = b;
        checks_since_best = 0;
      } else if (++checks_since_best >= cfg.patience) {
        break;
      }
    }
  }

  out.valid_accuracy = best.valid_accuracy;
  out.weights = best.weights;
  out.bias = best.bias;
  out.final_train_loss = out.train_loss_curve.back();
  out.test_accuracy = detail::probe_accuracy(ds.embeddings, ds.labels, ds.test, out.weights, out.bias);
  return out;
}

}  // namespace unigraph
