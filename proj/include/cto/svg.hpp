#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cto/csv.hpp"
#include "cto/errors.hpp"

namespace cto {

/// Flat SVG emission for quick inspection of fronts and bands. Output is
/// deterministic: fixed canvas, shortest round-trip number formatting.
namespace svg {

namespace detail {

constexpr double kWidth = 420.0, kHeight = 320.0;
constexpr double kMarginLeft = 54.0, kMarginRight = 14.0;
constexpr double kMarginTop = 18.0, kMarginBottom = 40.0;

struct Axis {
  double lo = 0.0, hi = 1.0;

  static Axis around(const Eigen::VectorXd& values) {
    Axis a;
    a.lo = values.minCoeff();
    a.hi = values.maxCoeff();
    if (a.hi - a.lo <= 0.0) {
      a.lo -= 0.5;
      a.hi += 0.5;
    }
    const double pad = 0.05 * (a.hi - a.lo);
    a.lo -= pad;
    a.hi += pad;
    return a;
  }

  double fraction(double v) const { return (v - lo) / (hi - lo); }
};

inline double map_x(const Axis& a, double v) {
  return kMarginLeft + a.fraction(v) * (kWidth - kMarginLeft - kMarginRight);
}
inline double map_y(const Axis& a, double v) {
  return kHeight - kMarginBottom - a.fraction(v) * (kHeight - kMarginTop - kMarginBottom);
}

inline void open_canvas(std::string& out, const std::string& x_label,
                        const std::string& y_label, const Axis& x, const Axis& y) {
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_double(kWidth) +
         "\" height=\"" + format_double(kHeight) + "\" viewBox=\"0 0 " +
         format_double(kWidth) + " " + format_double(kHeight) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // Frame and axis labels with the data extent at the corners.
  out += "<rect x=\"" + format_double(kMarginLeft) + "\" y=\"" + format_double(kMarginTop) +
         "\" width=\"" + format_double(kWidth - kMarginLeft - kMarginRight) +
         "\" height=\"" + format_double(kHeight - kMarginTop - kMarginBottom) +
         "\" fill=\"none\" stroke=\"#888\"/>\n";
  auto text = [&out](double px, double py, const std::string& body,
                     const std::string& anchor) {
    out += "<text x=\"" + format_double(px) + "\" y=\"" + format_double(py) +
           "\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"" + anchor +
           "\">" + body + "</text>\n";
  };
  text(kWidth / 2.0, kHeight - 8.0, x_label, "middle");
  text(12.0, kHeight / 2.0, y_label, "middle");
  text(kMarginLeft, kHeight - kMarginBottom + 14.0, format_double(x.lo), "start");
  text(kWidth - kMarginRight, kHeight - kMarginBottom + 14.0, format_double(x.hi), "end");
  text(kMarginLeft - 4.0, kHeight - kMarginBottom, format_double(y.lo), "end");
  text(kMarginLeft - 4.0, kMarginTop + 10.0, format_double(y.hi), "end");
}

}  // namespace detail

/// Scatter of predictions in one output-pair plane: the full cloud in grey,
/// the retained (non-dominated) subset in black.
inline std::string front_scatter(const Eigen::VectorXd& cloud_x,
                                 const Eigen::VectorXd& cloud_y,
                                 const Eigen::VectorXd& front_x,
                                 const Eigen::VectorXd& front_y,
                                 const std::string& x_label, const std::string& y_label) {
  if (cloud_x.size() != cloud_y.size() || front_x.size() != front_y.size())
    throw ShapeError("front_scatter: coordinate lengths disagree");
  Eigen::VectorXd all_x(cloud_x.size() + front_x.size());
  all_x << cloud_x, front_x;
  Eigen::VectorXd all_y(cloud_y.size() + front_y.size());
  all_y << cloud_y, front_y;
  const detail::Axis ax = detail::Axis::around(all_x);
  const detail::Axis ay = detail::Axis::around(all_y);

  std::string out;
  detail::open_canvas(out, x_label, y_label, ax, ay);
  for (Eigen::Index i = 0; i < cloud_x.size(); ++i)
    out += "<circle cx=\"" + format_double(detail::map_x(ax, cloud_x(i))) + "\" cy=\"" +
           format_double(detail::map_y(ay, cloud_y(i))) +
           "\" r=\"1.5\" fill=\"#bbb\"/>\n";
  for (Eigen::Index i = 0; i < front_x.size(); ++i)
    out += "<circle cx=\"" + format_double(detail::map_x(ax, front_x(i))) + "\" cy=\"" +
           format_double(detail::map_y(ay, front_y(i))) +
           "\" r=\"2.2\" fill=\"black\"/>\n";
  out += "</svg>\n";
  return out;
}

/// Band chart: shaded credible region between lower and upper with the
/// median polyline on top.
inline std::string band_chart(const Eigen::VectorXd& grid, const Eigen::VectorXd& median,
                              const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                              const std::string& x_label, const std::string& y_label) {
  const auto n = grid.size();
  if (median.size() != n || lower.size() != n || upper.size() != n)
    throw ShapeError("band_chart: column lengths disagree");
  if (n < 1) throw ArgumentError("band_chart: empty band");
  Eigen::VectorXd all_y(2 * n);
  all_y << lower, upper;
  const detail::Axis ax = detail::Axis::around(grid);
  const detail::Axis ay = detail::Axis::around(all_y);

  std::string out;
  detail::open_canvas(out, x_label, y_label, ax, ay);
  std::string polygon = "<polygon fill=\"#cfe3f7\" stroke=\"none\" points=\"";
  for (Eigen::Index i = 0; i < n; ++i)
    polygon += format_double(detail::map_x(ax, grid(i))) + "," +
               format_double(detail::map_y(ay, upper(i))) + " ";
  for (Eigen::Index i = n - 1; i >= 0; --i)
    polygon += format_double(detail::map_x(ax, grid(i))) + "," +
               format_double(detail::map_y(ay, lower(i))) + " ";
  polygon += "\"/>\n";
  out += polygon;
  std::string line = "<polyline fill=\"none\" stroke=\"#1a4d8f\" stroke-width=\"1.5\" points=\"";
  for (Eigen::Index i = 0; i < n; ++i)
    line += format_double(detail::map_x(ax, grid(i))) + "," +
            format_double(detail::map_y(ay, median(i))) + " ";
  line += "\"/>\n";
  out += line;
  for (Eigen::Index i = 0; i < n; ++i)
    out += "<circle cx=\"" + format_double(detail::map_x(ax, grid(i))) + "\" cy=\"" +
           format_double(detail::map_y(ay, median(i))) +
           "\" r=\"2\" fill=\"#1a4d8f\"/>\n";
  out += "</svg>\n";
  return out;
}

}  // namespace svg
}  // namespace cto
