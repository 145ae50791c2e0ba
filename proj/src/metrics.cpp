#include "mmxai/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mmxai {

ClassificationMetrics classification_metrics(const std::vector<int>& predictions,
                                             const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw std::invalid_argument("classification_metrics: need equal non-empty inputs");
  }
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos = labels[i] == 1;
    const bool pred_pos = predictions[i] == 1;
    if (pos && pred_pos) ++tp;
    else if (pos && !pred_pos) ++fn;
    else if (!pos && pred_pos) ++fp;
    else ++tn;
  }
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(labels.size());
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) m.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return m;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 3) {
    throw std::invalid_argument("pearson: need equal lengths >= 3");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) {
    throw std::invalid_argument("pearson: zero variance input");
  }
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("regularized_incomplete_beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) {
    throw std::invalid_argument("regularized_incomplete_beta: a, b must be positive");
  }
  if (x < 0.0 || x > 1.0) {
    throw std::invalid_argument("regularized_incomplete_beta: x must lie in [0,1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                        a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(log_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * betacf(a, b, x) / a;
  }
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 3) {
    throw std::invalid_argument("paired_ttest: need equal lengths >= 3");
  }
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (var == 0.0) {
    throw std::invalid_argument("paired_ttest: zero variance in paired differences");
  }
  const double sd = std::sqrt(var);
  TTestResult r;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double dof = static_cast<double>(n - 1);
  r.p = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + r.t * r.t));
  return r;
}

double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("iou: mask sizes " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool av = a[i] != 0, bv = b[i] != 0;
    if (av && bv) ++inter;
    if (av || bv) ++uni;
  }
  if (uni == 0) return 1.0;  // both empty: vacuous agreement
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MeanSd mean_sd(const std::vector<double>& values) {
  MeanSd out;
  out.n = values.size();
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

}  // namespace

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["fold"] = r.fold;
  j["n_test"] = r.n_test;
  j["accuracy"] = r.accuracy;
  j["sensitivity"] = opt_json(r.sensitivity);
  j["specificity"] = opt_json(r.specificity);
  j["mse_tab"] = r.mse_tab;
  j["mse_img"] = r.mse_img;
  j["flip_rate"] = r.flip_rate;
  j["rho"] = {{"mean", r.rho.mean}, {"sd", r.rho.sd}, {"n", r.rho.n}};
  j["t_test"] = {{"t", r.t_stat}, {"p", r.p_value}};
  j["iou_tab"] = {{"mean", r.iou_tab.mean}, {"sd", r.iou_tab.sd}};
  j["iou_img"] = {{"mean", r.iou_img.mean}, {"sd", r.iou_img.sd}};
  return j.dump(2) + "\n";
}

std::string report_csv_header() {
  return "fold,n_test,accuracy,sensitivity,specificity,mse_tab,mse_img,flip_rate,"
         "rho_mean,rho_sd,t_stat,p_value,iou_tab_mean,iou_tab_sd,iou_img_mean,iou_img_sd";
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << r.fold << ',' << r.n_test << ',' << num(r.accuracy) << ','
     << (r.sensitivity ? num(*r.sensitivity) : "") << ','
     << (r.specificity ? num(*r.specificity) : "") << ',' << num(r.mse_tab) << ','
     << num(r.mse_img) << ',' << num(r.flip_rate) << ',' << num(r.rho.mean) << ','
     << num(r.rho.sd) << ',' << num(r.t_stat) << ',' << num(r.p_value) << ','
     << num(r.iou_tab.mean) << ',' << num(r.iou_tab.sd) << ',' << num(r.iou_img.mean) << ','
     << num(r.iou_img.sd);
  return os.str();
}

}  // namespace mmxai
