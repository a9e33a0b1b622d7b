#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "deblur/error.hpp"
#include "deblur/tensor.hpp"

namespace deblur::metrics {

/// Axis-aligned box, top-left (x, y), size (w, h), detector confidence.
struct DetectionBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;
  double confidence = 1.0;

  void validate() const {
    if (!(w > 0.0 && h > 0.0)) throw FormatError("box width and height must be > 0");
    if (!(confidence >= 0.0 && confidence <= 1.0)) throw FormatError("box confidence must be in [0,1]");
  }
};

struct DetectionRecord {
  std::string id;
  std::vector<DetectionBox> boxes;
};

inline double iou(const DetectionBox& a, const DetectionBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

struct Score {
  double recall = 0.0;
  long false_positives = 0;
  double failure_rate = 0.0;
  /// Mean confidence of matched detections; NaN when nothing matched.
  double confidence_mean = 0.0;
  long total_truths = 0;
  long matched = 0;
  long total_detections = 0;
  long scored_images = 0;
  long failed_images = 0;
};

/// Per-image greedy matching result: match[i] is the truth index matched by
/// detection i (in input order) or -1.
inline std::vector<int> greedy_match(const std::vector<DetectionBox>& detections,
                                     const std::vector<DetectionBox>& truths, double iou_thresh = 0.5) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });
  std::vector<int> match(detections.size(), -1);
  std::vector<bool> taken(truths.size(), false);
  for (std::size_t d : order) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (taken[t]) continue;
      const double v = iou(detections[d], truths[t]);
      if (v > best_iou) {  // ties keep the lower truth index
        best_iou = v;
        best = static_cast<int>(t);
      }
    }
    if (best >= 0 && best_iou > iou_thresh) {
      match[d] = best;
      taken[best] = true;
    }
  }
  return match;
}

/// Detections sorted by confidence (descending) claim the unmatched truth
/// box of highest IoU when that IoU is strictly above `iou_thresh`.
/// Images come from the truth set; an image counts as a failure when it
/// has truth boxes and none is matched (truth-free images are not scored).
inline Score match_and_score(const std::vector<DetectionRecord>& detections,
                             const std::vector<DetectionRecord>& truth, double iou_thresh = 0.5) {
  if (truth.empty()) throw FormatError("match_and_score: empty truth set");
  std::map<std::string, const DetectionRecord*> truth_by_id;
  for (const auto& r : truth) {
    if (r.id.empty()) throw FormatError("match_and_score: empty image id");
    if (!truth_by_id.emplace(r.id, &r).second) throw FormatError("match_and_score: duplicate truth id " + r.id);
  }
  std::map<std::string, std::vector<DetectionBox>> det_by_id;
  for (const auto& r : detections) {
    if (!truth_by_id.count(r.id)) throw FormatError("match_and_score: unknown image id '" + r.id + "'");
    auto& v = det_by_id[r.id];
    v.insert(v.end(), r.boxes.begin(), r.boxes.end());
  }

  Score s;
  double conf_sum = 0.0;
  for (const auto& [id, rec] : truth_by_id) {
    static const std::vector<DetectionBox> none;
    const auto it = det_by_id.find(id);
    const auto& dets = it == det_by_id.end() ? none : it->second;
    const auto match = greedy_match(dets, rec->boxes, iou_thresh);
    long matched_here = 0;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (match[d] >= 0) {
        ++matched_here;
        conf_sum += dets[d].confidence;
      } else {
        ++s.false_positives;
      }
    }
    s.total_truths += static_cast<long>(rec->boxes.size());
    s.total_detections += static_cast<long>(dets.size());
    s.matched += matched_here;
    if (!rec->boxes.empty()) {
      ++s.scored_images;
      if (matched_here == 0) ++s.failed_images;
    }
  }
  s.recall = s.total_truths ? static_cast<double>(s.matched) / s.total_truths : 0.0;
  s.failure_rate = s.scored_images ? static_cast<double>(s.failed_images) / s.scored_images : 0.0;
  s.confidence_mean = s.matched ? conf_sum / s.matched : std::nan("");
  return s;
}

/// JSON Lines: {"id": "...", "boxes": [[x, y, w, h, confidence], ...]}
inline std::vector<DetectionRecord> read_detections(std::istream& is) {
  std::vector<DetectionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DetectionRecord r;
      r.id = j.at("id").get<std::string>();
      if (r.id.empty()) throw FormatError("empty id");
      for (const auto& b : j.at("boxes")) {
        if (!b.is_array() || (b.size() != 5 && b.size() != 4)) throw FormatError("box must be [x,y,w,h,confidence]");
        DetectionBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(),
                         b.size() == 5 ? b[4].get<double>() : 1.0};
        box.validate();
        r.boxes.push_back(box);
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("detections line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_detections(std::ostream& os, const std::vector<DetectionRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["boxes"] = nlohmann::json::array();
    for (const auto& b : r.boxes) j["boxes"].push_back({b.x, b.y, b.w, b.h, b.confidence});
    os << j.dump() << '\n';
  }
}

/// Images are in [-1, 1]; metrics work on [0, 1].
template <typename T>
double psnr(const Tensor<T>& img, const Tensor<T>& ref) {
  require_same_shape(img, ref, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = (static_cast<double>(img[i]) - ref[i]) / 2.0;
    se += d * d;
  }
  const double mse = se / static_cast<double>(img.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

/// Mean SSIM over all window x window patches (stride 1, uniform weights,
/// population statistics) of every channel. C1 = 0.01^2, C2 = 0.03^2 for a
/// unit data range. The window shrinks to the image size when smaller.
template <typename T>
double ssim(const Tensor<T>& img, const Tensor<T>& ref, int window = 8) {
  require_same_shape(img, ref, "ssim");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int H = img.height(), W = img.width();
  const int wh = std::min(window, H), ww = std::min(window, W);
  const double n = static_cast<double>(wh) * ww;
  double total = 0.0;
  long count = 0;
  for (int b = 0; b < img.batch(); ++b) {
    for (int c = 0; c < img.channels(); ++c) {
      for (int y = 0; y + wh <= H; ++y) {
        for (int x = 0; x + ww <= W; ++x) {
          double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
          for (int dy = 0; dy < wh; ++dy) {
            for (int dx = 0; dx < ww; ++dx) {
              const double a = (static_cast<double>(img.at(b, c, y + dy, x + dx)) + 1.0) / 2.0;
              const double r = (static_cast<double>(ref.at(b, c, y + dy, x + dx)) + 1.0) / 2.0;
              sa += a;
              sb += r;
              saa += a * a;
              sbb += r * r;
              sab += a * r;
            }
          }
          const double ma = sa / n, mb = sb / n;
          const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
          total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
          ++count;
        }
      }
    }
  }
  return total / static_cast<double>(count);
}

/// One line of the comparison table. Unavailable values are NaN / nullopt.
struct ReportRow {
  std::string name;
  std::optional<Score> detection;
  double psnr = std::nan("");
  double ssim = std::nan("");
};

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"variant",  "failure_rate",    "confidence_mean",
                                             "recall",   "false_positives", "psnr",
                                             "ssim"};
  return cols;
}

namespace detail {
inline std::string fmt(double v, const char* format) {
  if (std::isnan(v)) return "";
  char buf[48];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

inline std::vector<std::string> cells(const ReportRow& r) {
  const auto& d = r.detection;
  return {r.name,
          d ? fmt(d->failure_rate, "%.6f") : "",
          d ? fmt(d->confidence_mean, "%.6f") : "",
          d ? fmt(d->recall, "%.6f") : "",
          d ? std::to_string(d->false_positives) : "",
          fmt(r.psnr, "%.4f"),
          fmt(r.ssim, "%.6f")};
}
}  // namespace detail

inline void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rows) {
    const auto c = detail::cells(r);
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << '\n';
  }
}

/// Fixed-width text table; empty cells print as "-".
inline void write_report_table(std::ostream& os, const std::vector<ReportRow>& rows) {
  const auto& cols = report_columns();
  std::vector<std::vector<std::string>> grid;
  grid.push_back(cols);
  for (const auto& r : rows) {
    auto c = detail::cells(r);
    for (auto& s : c)
      if (s.empty()) s = "-";
    grid.push_back(std::move(c));
  }
  std::vector<std::size_t> width(cols.size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (std::size_t i = 0; i < grid[k].size(); ++i) {
      const auto& s = grid[k][i];
      if (i) os << "  ";
      if (i == 0) os << s << std::string(width[i] - s.size(), ' ');
      else os << std::string(width[i] - s.size(), ' ') << s;
    }
    os << '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
}

}  // namespace deblur::metrics
