// SPDX-License-Identifier: Apache-2.0
//
// Box algebra shared by the data pipeline, the losses, memory gating and the
// metrics.

#pragma once

#include <ostream>

namespace detrack {

/// Corner-form box (x1, y1, x2, y2). Coordinates are normalized to some
/// reference frame (search crop or full image) chosen by the caller.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool finite() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Top-left + size box in pixels, tied to the frame it lives in.
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  int frame_width = 1;
  int frame_height = 1;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

std::ostream& operator<<(std::ostream& os, const BoundingBox& b);
std::ostream& operator<<(std::ostream& os, const PixelBox& b);

BoundingBox canonicalize(const BoundingBox& b);

/// Intersection over union. Zero when the union is empty.
/// Throws std::invalid_argument("invalid box") on non-finite input.
double iou(const BoundingBox& a, const BoundingBox& b);
double iou(const PixelBox& a, const PixelBox& b);

/// SIoU regression loss: 1 - IoU + (distance + shape) / 2, with the
/// angle-aware distance cost. Zero iff pred == gt.
double siou_loss(const BoundingBox& pred, const BoundingBox& gt);

/// Square window centred on `prev` with side factor * sqrt(w * h).
PixelBox crop_window(const PixelBox& prev, double factor);

BoundingBox to_normalized(const PixelBox& p);
PixelBox to_pixel(const BoundingBox& b, int frame_width, int frame_height);

/// Clamp a box into [0, W] x [0, H] of its frame.
PixelBox clamp_to_frame(const PixelBox& p);

}  // namespace detrack
