#include "mavlkit/pgm.hpp"

#include <cmath>
#include <fstream>

namespace mavlkit {

namespace {

// Reads the next header token, skipping whitespace and # comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw ValidationError("truncated PGM header in " + path);
  return tok;
}

int parse_dim(const std::string& tok, const char* what, const std::string& path) {
  try {
    size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("bad PGM ") + what + " '" + tok + "' in " + path);
  }
}

}  // namespace

Tensor read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open PGM: " + path);
  if (next_token(f, path) != "P5")
    throw ValidationError(path + " is not a binary PGM (expected P5)");
  const int w = parse_dim(next_token(f, path), "width", path);
  const int h = parse_dim(next_token(f, path), "height", path);
  const int maxval = parse_dim(next_token(f, path), "maxval", path);
  if (maxval > 255)
    throw ValidationError("PGM maxval " + std::to_string(maxval) +
                          " exceeds 8-bit in " + path);

  std::string raster(static_cast<size_t>(w) * h, '\0');
  f.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (f.gcount() != static_cast<std::streamsize>(raster.size()))
    throw ValidationError("truncated PGM raster in " + path);

  Tensor img = Tensor::zeros({h, w});
  for (size_t i = 0; i < raster.size(); ++i)
    img.data[i] = static_cast<double>(static_cast<unsigned char>(raster[i]));
  return img;
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 2)
    throw ValidationError("write_pgm expects [H,W], got " + image.shape_str());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open PGM for writing: " + path);
  f << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  std::string raster;
  raster.reserve(image.data.size());
  for (double v : image.data) {
    const double r = std::round(v);
    raster.push_back(static_cast<char>(
        static_cast<unsigned char>(r < 0 ? 0 : r > 255 ? 255 : r)));
  }
  f.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!f) throw ValidationError("short write to PGM: " + path);
}

}  // namespace mavlkit
