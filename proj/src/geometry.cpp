// SPDX-License-Identifier: Apache-2.0

#include "detrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace detrack {

namespace {

constexpr double kSiouEps = 1e-9;

void require_finite(const BoundingBox& b) {
  if (!b.finite()) throw std::invalid_argument("invalid box");
}

}  // namespace

bool BoundingBox::finite() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2);
}

std::ostream& operator<<(std::ostream& os, const BoundingBox& b) {
  return os << "(" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2
            << ")";
}

std::ostream& operator<<(std::ostream& os, const PixelBox& b) {
  return os << "[" << b.x << ", " << b.y << ", " << b.w << ", " << b.h
            << " @" << b.frame_width << "x" << b.frame_height << "]";
}

BoundingBox canonicalize(const BoundingBox& b) {
  return {std::min(b.x1, b.x2), std::min(b.y1, b.y2), std::max(b.x1, b.x2),
          std::max(b.y1, b.y2)};
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  require_finite(a);
  require_finite(b);
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const PixelBox& a, const PixelBox& b) {
  return iou(BoundingBox{a.x, a.y, a.x + a.w, a.y + a.h},
             BoundingBox{b.x, b.y, b.x + b.w, b.y + b.h});
}

double siou_loss(const BoundingBox& pred, const BoundingBox& gt) {
  require_finite(pred);
  require_finite(gt);
  if (!(gt.area() > 0.0)) throw std::invalid_argument("degenerate target");

  const double w1 = pred.width(), h1 = pred.height();
  const double w2 = gt.width(), h2 = gt.height();
  const double overlap = iou(pred, gt);

  // Enclosing box.
  const double cw = std::max(pred.x2, gt.x2) - std::min(pred.x1, gt.x1);
  const double ch = std::max(pred.y2, gt.y2) - std::min(pred.y1, gt.y1);

  const double s_cw = gt.cx() - pred.cx();
  const double s_ch = gt.cy() - pred.cy();
  const double sigma = std::sqrt(s_cw * s_cw + s_ch * s_ch) + kSiouEps;
  const double sin_x = std::abs(s_cw) / sigma;
  const double sin_y = std::abs(s_ch) / sigma;
  const double sin_alpha = sin_x > std::numbers::sqrt2 / 2.0 ? sin_y : sin_x;
  const double angle =
      std::cos(2.0 * std::asin(sin_alpha) - std::numbers::pi / 2.0);

  const double gamma = angle - 2.0;
  const double rho_x = std::pow(s_cw / (cw + kSiouEps), 2);
  const double rho_y = std::pow(s_ch / (ch + kSiouEps), 2);
  const double distance =
      2.0 - std::exp(gamma * rho_x) - std::exp(gamma * rho_y);

  const double omega_w = std::abs(w1 - w2) / std::max(w1, w2);
  const double omega_h = std::abs(h1 - h2) / std::max(h1, h2);
  const double shape = std::pow(1.0 - std::exp(-omega_w), 4) +
                       std::pow(1.0 - std::exp(-omega_h), 4);

  return 1.0 - overlap + 0.5 * (distance + shape);
}

PixelBox crop_window(const PixelBox& prev, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("crop factor must be > 0");
  if (!(prev.w > 0.0 && prev.h > 0.0))
    throw std::invalid_argument("crop_window: zero-area box");
  const double side = factor * std::sqrt(prev.w * prev.h);
  return {prev.cx() - 0.5 * side, prev.cy() - 0.5 * side, side, side,
          prev.frame_width, prev.frame_height};
}

BoundingBox to_normalized(const PixelBox& p) {
  const double fw = p.frame_width, fh = p.frame_height;
  return {p.x / fw, p.y / fh, (p.x + p.w) / fw, (p.y + p.h) / fh};
}

PixelBox to_pixel(const BoundingBox& b, int frame_width, int frame_height) {
  const BoundingBox c = canonicalize(b);
  return {c.x1 * frame_width, c.y1 * frame_height, c.width() * frame_width,
          c.height() * frame_height, frame_width, frame_height};
}

PixelBox clamp_to_frame(const PixelBox& p) {
  const double x1 = std::clamp(p.x, 0.0, double(p.frame_width));
  const double y1 = std::clamp(p.y, 0.0, double(p.frame_height));
  const double x2 = std::clamp(p.x + p.w, 0.0, double(p.frame_width));
  const double y2 = std::clamp(p.y + p.h, 0.0, double(p.frame_height));
  return {x1, y1, x2 - x1, y2 - y1, p.frame_width, p.frame_height};
}

}  // namespace detrack
