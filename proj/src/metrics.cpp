#include "mqt/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace mqt {

namespace {

void check_pairs(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold, int k) {
  if (pred.size() != gold.size())
    throw MqtError("metrics: " + std::to_string(pred.size()) + " predicted calls vs " +
                   std::to_string(gold.size()) + " gold calls");
  if (k < 2) throw MqtError("metrics: need at least 2 classes");
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size())
      throw MqtError("metrics: call " + std::to_string(i) + " has " +
                     std::to_string(pred[i].size()) + " predicted steps vs " +
                     std::to_string(gold[i].size()) + " gold steps");
    for (int32_t v : pred[i])
      if (v < 0 || v >= k) throw MqtError("metrics: predicted label out of range");
    for (int32_t v : gold[i])
      if (v < 0 || v >= k) throw MqtError("metrics: gold label out of range");
  }
}

void finish_class(ClassPrf& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) {
    c.precision = c.recall = c.f1 = 1.0;
    c.vacuous = true;
    return;
  }
  const int64_t pred_n = c.tp_pred + c.fp;
  c.precision = pred_n > 0 ? static_cast<double>(c.tp_pred) / static_cast<double>(pred_n) : 0.0;
  const int64_t gold_n = c.tp + c.fn;
  c.recall = gold_n > 0 ? static_cast<double>(c.tp) / static_cast<double>(gold_n) : 0.0;
  c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
}

void finish_report(PrfReport& r) {
  double sp = 0, sr = 0, sf = 0;
  int64_t tp = 0, tp_pred = 0, fp = 0, fn = 0;
  for (ClassPrf& c : r.per_class) {
    finish_class(c);
    sp += c.precision;
    sr += c.recall;
    sf += c.f1;
    tp += c.tp;
    tp_pred += c.tp_pred;
    fp += c.fp;
    fn += c.fn;
  }
  const double n = static_cast<double>(r.per_class.size());
  if (n > 0) {
    r.macro_p = sp / n;
    r.macro_r = sr / n;
    r.macro_f1 = sf / n;
  }
  r.micro_p = tp_pred + fp > 0 ? static_cast<double>(tp_pred) / static_cast<double>(tp_pred + fp)
                               : (tp + fn == 0 ? 1.0 : 0.0);
  r.micro_r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                          : (tp_pred + fp == 0 ? 1.0 : 0.0);
  r.micro_f1 =
      r.micro_p + r.micro_r > 0 ? 2 * r.micro_p * r.micro_r / (r.micro_p + r.micro_r) : 0.0;
}

}  // namespace

std::vector<Segment> label_segments(const LabelSeq& y) {
  std::vector<Segment> out;
  size_t i = 0;
  while (i < y.size()) {
    size_t j = i;
    while (j < y.size() && y[j] == y[i]) ++j;
    out.push_back({y[i], static_cast<int>(i), static_cast<int>(j)});
    i = j;
  }
  return out;
}

PrfReport timestep_prf(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold,
                       int k) {
  check_pairs(pred, gold, k);
  PrfReport r;
  r.per_class.resize(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) r.per_class[static_cast<size_t>(c)].label = c;
  for (size_t call = 0; call < pred.size(); ++call) {
    for (size_t t = 0; t < pred[call].size(); ++t) {
      const int32_t p = pred[call][t], g = gold[call][t];
      ++r.units;
      if (p == g) {
        ++r.per_class[static_cast<size_t>(p)].tp;
        ++r.per_class[static_cast<size_t>(p)].tp_pred;
      } else {
        ++r.per_class[static_cast<size_t>(p)].fp;
        ++r.per_class[static_cast<size_t>(g)].fn;
      }
    }
  }
  finish_report(r);
  return r;
}

namespace {

// Longest stretch of `label` inside [start, stop) of pred.
int longest_correct_run(const LabelSeq& pred, int start, int stop, int32_t label) {
  int best = 0, cur = 0;
  for (int t = start; t < stop; ++t) {
    cur = pred[static_cast<size_t>(t)] == label ? cur + 1 : 0;
    best = std::max(best, cur);
  }
  return best;
}

}  // namespace

PrfReport instance_prf(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold,
                       int k, int min_run) {
  check_pairs(pred, gold, k);
  PrfReport r;
  r.per_class.resize(static_cast<size_t>(k - 1));
  for (int c = 1; c < k; ++c) r.per_class[static_cast<size_t>(c - 1)].label = c;
  for (size_t call = 0; call < pred.size(); ++call) {
    const auto gsegs = label_segments(gold[call]);
    const auto psegs = label_segments(pred[call]);
    for (const Segment& g : gsegs) {
      if (g.label == 0) continue;
      ClassPrf& c = r.per_class[static_cast<size_t>(g.label - 1)];
      ++r.units;
      if (longest_correct_run(pred[call], g.start, g.stop, g.label) >= min_run)
        ++c.tp;
      else
        ++c.fn;
    }
    for (const Segment& p : psegs) {
      if (p.label == 0 || p.len() < min_run) continue;
      ClassPrf& c = r.per_class[static_cast<size_t>(p.label - 1)];
      bool matched = false;
      for (const Segment& g : gsegs) {
        if (g.label != p.label) continue;
        if (std::min(g.stop, p.stop) - std::max(g.start, p.start) >= min_run) {
          matched = true;
          break;
        }
      }
      if (matched)
        ++c.tp_pred;
      else
        ++c.fp;
    }
  }
  finish_report(r);
  return r;
}

Confusion confusion(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold, int k) {
  check_pairs(pred, gold, k);
  Confusion m;
  m.k = k;
  m.counts.assign(static_cast<size_t>(k) * k, 0);
  for (size_t call = 0; call < pred.size(); ++call)
    for (size_t t = 0; t < pred[call].size(); ++t) {
      const int32_t p = pred[call][t], g = gold[call][t];
      ++m.counts[static_cast<size_t>(g) * k + p];
      ++m.total;
      if (p != g) {
        ++m.errors;
        if (p != 0 && g != 0) ++m.question_to_question;
      }
    }
  return m;
}

MarginStats margin_stats(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold,
                         int k, int min_run) {
  check_pairs(pred, gold, k);
  MarginStats ms;
  for (size_t call = 0; call < pred.size(); ++call) {
    const auto gsegs = label_segments(gold[call]);
    const auto psegs = label_segments(pred[call]);
    for (const Segment& g : gsegs) {
      if (g.label == 0) continue;
      // best-overlap matching predicted run of the same label, >= min_run
      const Segment* best = nullptr;
      int best_ov = 0;
      for (const Segment& p : psegs) {
        if (p.label != g.label || p.len() < min_run) continue;
        const int ov = std::min(g.stop, p.stop) - std::max(g.start, p.start);
        if (ov >= min_run && ov > best_ov) {
          best = &p;
          best_ov = ov;
        }
      }
      if (!best) continue;
      ms.start_errors.push_back((g.start - best->start) * kSecondsPerStep);
      ms.stop_errors.push_back((best->stop - g.stop) * kSecondsPerStep);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  ms.mean_start = mean(ms.start_errors);
  ms.mean_stop = mean(ms.stop_errors);
  return ms;
}

std::vector<NoiseBin> noise_binned_f1(const std::vector<LabelSeq>& pred,
                                      const std::vector<LabelSeq>& gold,
                                      const std::vector<double>& levels,
                                      const std::vector<double>& edges, int k) {
  check_pairs(pred, gold, k);
  if (levels.size() != pred.size())
    throw MqtError("noise_binned_f1: one corruption level per call required");
  if (edges.size() < 2) throw MqtError("noise_binned_f1: need at least 2 bin edges");
  std::vector<NoiseBin> bins;
  for (size_t b = 0; b + 1 < edges.size(); ++b) {
    NoiseBin bin;
    bin.lo = edges[b];
    bin.hi = edges[b + 1];
    std::vector<LabelSeq> bp, bg;
    for (size_t i = 0; i < levels.size(); ++i)
      if (levels[i] >= bin.lo && levels[i] < bin.hi) {
        bp.push_back(pred[i]);
        bg.push_back(gold[i]);
      }
    bin.n_calls = static_cast<int>(bp.size());
    if (bin.n_calls > 0) {
      // micro counts over question classes only
      const PrfReport r = timestep_prf(bp, bg, k);
      int64_t tp = 0, fp = 0, fn = 0;
      for (const ClassPrf& c : r.per_class) {
        if (c.label == 0) continue;
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
      }
      const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double rr = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      bin.micro_f1 = p + rr > 0 ? 2 * p * rr / (p + rr) : 0.0;
    }
    bins.push_back(bin);
  }
  return bins;
}

std::string prf_to_line(const std::string& name, const PrfReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "metric=" << name << " macro_p=" << r.macro_p << " macro_r=" << r.macro_r
     << " macro_f1=" << r.macro_f1 << " micro_f1=" << r.micro_f1 << " units=" << r.units;
  return os.str();
}

std::string prf_to_table(const std::string& name, const PrfReport& r) {
  std::ostringstream os;
  os << name << "\n";
  os << "  class       P       R      F1      tp      fp      fn\n";
  os << std::fixed << std::setprecision(4);
  for (const ClassPrf& c : r.per_class) {
    os << "  " << std::setw(5) << c.label << std::setw(8) << c.precision << std::setw(8)
       << c.recall << std::setw(8) << c.f1 << std::setw(8) << c.tp << std::setw(8) << c.fp
       << std::setw(8) << c.fn;
    if (c.vacuous) os << "  (absent)";
    os << "\n";
  }
  os << "  macro" << std::setw(8) << r.macro_p << std::setw(8) << r.macro_r << std::setw(8)
     << r.macro_f1 << "\n";
  return os.str();
}

}  // namespace mqt
