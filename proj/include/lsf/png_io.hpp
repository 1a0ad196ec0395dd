#pragma once

// 8-bit RGB PNG IO. Images are (height*width) x 3 row-major pixel matrices
// with values in [0,1]; writing quantizes with round(v*255).

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace lsf {

std::vector<uint8_t> quantize_rgb8(const Eigen::MatrixXd& img);

void write_png(const std::string& path, const Eigen::MatrixXd& img, int width,
               int height);

// Decodes any PNG that libpng can expand to 8-bit RGB. Throws DataError with
// the path on unreadable or malformed files.
Eigen::MatrixXd read_png(const std::string& path, int& width, int& height);

}  // namespace lsf
