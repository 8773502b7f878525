#include "mcgen/pgm.hpp"

#include <cctype>
#include <fstream>

namespace mcgen {

void write_pnm(const std::string& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ValueError("write_pnm: only 1 (P5) or 3 (P6) channels supported");
  }
  const std::size_t expect = static_cast<std::size_t>(img.height) *
                             static_cast<std::size_t>(img.width) *
                             static_cast<std::size_t>(img.channels);
  if (img.bytes.size() != expect) {
    throw ValueError("write_pnm: raster size mismatch");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pnm: cannot open " + path);
  f << (img.channels == 1 ? "P5" : "P6") << "\n"
    << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.bytes.data()),
          static_cast<std::streamsize>(img.bytes.size()));
  if (!f) throw IoError("write_pnm: write failed for " + path);
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw IoError("read_pnm: malformed header in " + path);
  return tok;
}

Index parse_dim(const std::string& tok, const std::string& path) {
  for (char ch : tok) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) {
      throw IoError("read_pnm: malformed header field '" + tok + "' in " + path);
    }
  }
  Index v = std::stoll(tok);
  if (v < 1) throw IoError("read_pnm: non-positive dimension in " + path);
  return v;
}

}  // namespace

PnmImage read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_pnm: cannot open " + path);
  std::string magic = next_token(f, path);
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IoError("read_pnm: unsupported magic '" + magic + "' in " + path);
  }
  const Index w = parse_dim(next_token(f, path), path);
  const Index h = parse_dim(next_token(f, path), path);
  const Index maxval = parse_dim(next_token(f, path), path);
  if (maxval != 255) {
    throw IoError("read_pnm: maxval " + std::to_string(maxval) +
                  " unsupported (must be 255) in " + path);
  }
  // Exactly one whitespace byte separates the header from the raster; the
  // token reader has already consumed it.
  PnmImage img;
  img.channels = channels;
  img.height = h;
  img.width = w;
  img.bytes.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
                   static_cast<std::size_t>(channels));
  f.read(reinterpret_cast<char*>(img.bytes.data()),
         static_cast<std::streamsize>(img.bytes.size()));
  if (static_cast<std::size_t>(f.gcount()) != img.bytes.size()) {
    throw IoError("read_pnm: truncated raster in " + path + " (got " +
                  std::to_string(f.gcount()) + " of " +
                  std::to_string(img.bytes.size()) + " bytes)");
  }
  return img;
}

}  // namespace mcgen
