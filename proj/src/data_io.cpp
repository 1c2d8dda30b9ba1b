#include "semcal/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "semcal/errors.hpp"

namespace semcal {

using json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary point formats assume a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

void check_label(long label, int num_classes, const fs::path& path, std::size_t where) {
  if (label < 0 || label >= 65535 || (num_classes > 0 && label >= num_classes)) {
    throw LabelRangeError(path.string() + ": label " + std::to_string(label) + " at " +
                          std::to_string(where) + " outside [0, " +
                          std::to_string(num_classes > 0 ? num_classes : 65535) + ")");
  }
}

PointCloud read_text_cloud(const fs::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double x, y, z;
    long label;
    std::string extra;
    if (!(ls >> x >> y >> z >> label)) {
      throw ParseError(path.string(), lineno, "expected 'x y z label'");
    }
    if (ls >> extra) throw ParseError(path.string(), lineno, "trailing text '" + extra + "'");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      throw ParseError(path.string(), lineno, "non-finite coordinate");
    }
    check_label(label, num_classes, path, lineno);
    cloud.points.emplace_back(x, y, z);
    cloud.labels.push_back(static_cast<int>(label));
  }
  return cloud;
}

std::vector<float> read_float_records(const fs::path& path) {
  const std::string data = read_file(path);
  if (data.size() % 16 != 0) {
    throw ParseError(path.string(), data.size() - data.size() % 16,
                     "file size is not a multiple of 16-byte records");
  }
  std::vector<float> values(data.size() / 4);
  std::memcpy(values.data(), data.data(), data.size());
  return values;
}

PointCloud read_binary_cloud(const fs::path& path, int num_classes) {
  const std::vector<float> v = read_float_records(path);
  PointCloud cloud;
  for (std::size_t i = 0; i < v.size() / 4; ++i) {
    const float* r = &v[4 * i];
    if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || !std::isfinite(r[2])) {
      throw ParseError(path.string(), 16 * i, "non-finite coordinate");
    }
    if (!(r[3] == std::floor(r[3]))) {
      throw ParseError(path.string(), 16 * i + 12, "label is not an integer");
    }
    check_label(static_cast<long>(r[3]), num_classes, path, 16 * i + 12);
    cloud.points.emplace_back(r[0], r[1], r[2]);
    cloud.labels.push_back(static_cast<int>(r[3]));
  }
  return cloud;
}

PointCloud read_kitti_cloud(const fs::path& path, const fs::path& sidecar, int num_classes) {
  const std::vector<float> v = read_float_records(path);
  const std::string raw = read_file(sidecar);
  const std::size_t n = v.size() / 4;
  if (raw.size() != 4 * n) {
    throw ParseError(sidecar.string(), raw.size(),
                     "expected " + std::to_string(n) + " uint32 labels");
  }
  std::vector<std::uint32_t> labels(n);
  std::memcpy(labels.data(), raw.data(), raw.size());
  PointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    const float* r = &v[4 * i];
    if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || !std::isfinite(r[2])) {
      throw ParseError(path.string(), 16 * i, "non-finite coordinate");
    }
    const long label = static_cast<long>(labels[i] & 0xFFFFu);
    check_label(label, num_classes, sidecar, 4 * i);
    cloud.points.emplace_back(r[0], r[1], r[2]);
    cloud.labels.push_back(static_cast<int>(label));
  }
  return cloud;
}

// ---- label images -----------------------------------------------------------

struct RawImage {
  int width = 0, height = 0;
  std::vector<std::uint16_t> pixels;
};

// Reads the next PGM header token, skipping whitespace and comments.
std::string pgm_token(const std::string& d, std::size_t& pos, const fs::path& path) {
  while (pos < d.size()) {
    if (std::isspace(static_cast<unsigned char>(d[pos]))) {
      ++pos;
    } else if (d[pos] == '#') {
      while (pos < d.size() && d[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < d.size() && !std::isspace(static_cast<unsigned char>(d[pos]))) ++pos;
  if (start == pos) throw ParseError(path.string(), start, "truncated header");
  return d.substr(start, pos - start);
}

long pgm_number(const std::string& d, std::size_t& pos, const fs::path& path) {
  const std::size_t at = pos;
  const std::string tok = pgm_token(d, pos, path);
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (*end != '\0' || v < 0) throw ParseError(path.string(), at, "bad number '" + tok + "'");
  return v;
}

RawImage read_pnm(const fs::path& path) {
  const std::string d = read_file(path);
  std::size_t pos = 0;
  const std::string magic = pgm_token(d, pos, path);
  if (magic == "P3" || magic == "P6") {
    throw UnsupportedDepth(path.string() + ": colour PPM, expected one channel");
  }
  if (magic != "P2" && magic != "P5") {
    throw ParseError(path.string(), 0, "not a PGM file");
  }
  RawImage img;
  img.width = static_cast<int>(pgm_number(d, pos, path));
  img.height = static_cast<int>(pgm_number(d, pos, path));
  const long maxval = pgm_number(d, pos, path);
  if (maxval < 1 || maxval > 65535) {
    throw UnsupportedDepth(path.string() + ": maxval " + std::to_string(maxval));
  }
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(n);
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) {
      const long v = pgm_number(d, pos, path);
      if (v > maxval) throw ParseError(path.string(), pos, "sample exceeds maxval");
      img.pixels[i] = static_cast<std::uint16_t>(v);
    }
    return img;
  }
  ++pos;  // single whitespace byte before raster
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  if (d.size() < pos + n * bpp) {
    throw ParseError(path.string(), d.size(), "raster is truncated");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(d.data() + pos + i * bpp);
    img.pixels[i] = bpp == 2 ? static_cast<std::uint16_t>(p[0] << 8 | p[1]) : p[0];
  }
  return img;
}

void write_pgm(const LabelImage& image, const fs::path& path) {
  const bool wide = image.num_classes() > 256;
  std::string out = "P5\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n" + (wide ? "65535" : "255") + "\n";
  for (auto v : image.grid()) {
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  write_file(path, out);
}

struct PngFile {
  FILE* fp = nullptr;
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

RawImage read_png(const fs::path& path) {
  PngFile file;
  file.fp = std::fopen(path.c_str(), "rb");
  if (!file.fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ParseError(path.string(), 0, "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  RawImage img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  int color = 0, depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path.string(), 0, "corrupt PNG data");
  }
  png_init_io(png, file.fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw UnsupportedDepth(path.string() + ": PNG has " +
                           std::to_string(color & PNG_COLOR_MASK_COLOR ? 3 : 2) +
                           " channels, expected one");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * img.height);
  rows.resize(img.height);
  for (int r = 0; r < img.height; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const png_byte* p = rows[r] + (depth == 16 ? 2 * c : c);
      img.pixels[static_cast<std::size_t>(r) * img.width + c] =
          depth == 16 ? static_cast<std::uint16_t>(p[0] << 8 | p[1]) : p[0];
    }
  }
  return img;
}

void write_png(const LabelImage& image, const fs::path& path) {
  PngFile file;
  file.fp = std::fopen(path.c_str(), "wb");
  if (!file.fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  const bool wide = image.num_classes() > 256;
  const int W = image.width(), H = image.height();
  std::vector<png_byte> buffer(static_cast<std::size_t>(W) * H * (wide ? 2 : 1));
  for (std::size_t i = 0; i < image.grid().size(); ++i) {
    const auto v = image.grid()[i];
    if (wide) {
      buffer[2 * i] = static_cast<png_byte>(v >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(v & 0xFF);
    } else {
      buffer[i] = static_cast<png_byte>(v);
    }
  }
  std::vector<png_bytep> rows(H);
  const std::size_t stride = static_cast<std::size_t>(W) * (wide ? 2 : 1);
  for (int r = 0; r < H; ++r) rows[r] = buffer.data() + r * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, file.fp);
  png_set_IHDR(png, info, W, H, wide ? 16 : 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RawImage read_raw_image(const fs::path& path) {
  return lower_extension(path) == ".png" ? read_png(path) : read_pnm(path);
}

// ---- JSON -------------------------------------------------------------------

std::string format_number(double v) {
  if (!std::isfinite(v)) throw NonFinite("cannot serialise a non-finite number");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// nlohmann's dump prints the shortest round-trip form; results want every
// float at full precision, so serialise by hand.
void dump(const json& j, std::string& out, int indent) {
  const std::string pad(indent, ' '), inner(indent + 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += inner + json(it.key()).dump() + ": ";
        dump(it.value(), out, indent + 2);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      const bool flat = std::all_of(j.begin(), j.end(), [](const json& e) {
        return e.is_number() || e.is_boolean() || e.is_string();
      });
      out += "[";
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat ? ", " : ",";
        if (!flat) out += "\n" + inner;
        first = false;
        dump(e, out, indent + 2);
      }
      if (!flat && !j.empty()) out += "\n" + pad;
      out += "]";
      return;
    }
    case json::value_t::number_float:
      out += format_number(j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

std::string to_text(const json& j) {
  std::string out;
  dump(j, out, 0);
  out += "\n";
  return out;
}

json parse_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), e.byte, e.what());
  }
}

// Field access that reports missing or mistyped fields as parse errors.
template <typename T>
T field(const json& j, const char* key, const fs::path& path) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(path.string(), 0, std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, std::string("field '") + key + "': " + e.what());
  }
}

json matrix_json(const Eigen::Matrix4d& M) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) {
    json row = json::array();
    for (int c = 0; c < 4; ++c) row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix4d matrix_from_json(const json& j, const fs::path& path) {
  Eigen::Matrix4d M;
  if (j.is_array() && j.size() == 16) {
    for (int k = 0; k < 16; ++k) M(k / 4, k % 4) = j[k].get<double>();
    return M;
  }
  if (!j.is_array() || j.size() != 4) throw ParseError(path.string(), 0, "matrix must be 4x4");
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) {
      throw ParseError(path.string(), 0, "matrix must be 4x4");
    }
    for (int c = 0; c < 4; ++c) M(r, c) = j[r][c].get<double>();
  }
  return M;
}

json intrinsics_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
          {"width", K.width}, {"height", K.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j, const fs::path& path) {
  CameraIntrinsics K{field<double>(j, "fx", path), field<double>(j, "fy", path),
                     field<double>(j, "cx", path), field<double>(j, "cy", path),
                     field<int>(j, "width", path), field<int>(j, "height", path)};
  K.validate();
  return K;
}

std::string frame_name(std::size_t k, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu%s", k, ext);
  return buf;
}

bool glob_match(const char* p, const char* s) {
  if (*p == '\0') return *s == '\0';
  if (*p == '*') return glob_match(p + 1, s) || (*s && glob_match(p, s + 1));
  if (*s && (*p == '?' || *p == *s)) return glob_match(p + 1, s + 1);
  return false;
}

}  // namespace

PointCloud read_point_cloud(const fs::path& path, CloudFormat format,
                            const std::optional<fs::path>& label_sidecar, int num_classes) {
  if (format == CloudFormat::Auto) {
    format = label_sidecar ? CloudFormat::Kitti
             : lower_extension(path) == ".bin" ? CloudFormat::Binary
                                                : CloudFormat::Text;
  }
  PointCloud cloud;
  switch (format) {
    case CloudFormat::Text: cloud = read_text_cloud(path, num_classes); break;
    case CloudFormat::Binary: cloud = read_binary_cloud(path, num_classes); break;
    case CloudFormat::Kitti:
      if (!label_sidecar) throw InvalidArgument("kitti clouds need a label sidecar");
      cloud = read_kitti_cloud(path, *label_sidecar, num_classes);
      break;
    case CloudFormat::Auto: break;
  }
  if (cloud.points.empty()) throw ParseError(path.string(), 0, "cloud has no points");
  return cloud;
}

void write_point_cloud(const PointCloud& cloud, const fs::path& path, CloudFormat format) {
  if (format == CloudFormat::Auto) {
    format = lower_extension(path) == ".bin" ? CloudFormat::Binary : CloudFormat::Text;
  }
  if (format == CloudFormat::Kitti) {
    throw InvalidArgument("writing kitti clouds is not supported");
  }
  if (cloud.points.size() != cloud.labels.size()) {
    throw InvalidArgument("points and labels differ in length");
  }
  std::string out;
  if (format == CloudFormat::Text) {
    char buf[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.points[i];
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d\n", p.x(), p.y(), p.z(),
                    cloud.labels[i]);
      out += buf;
    }
  } else {
    std::vector<float> v;
    v.reserve(4 * cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.points[i];
      v.insert(v.end(), {static_cast<float>(p.x()), static_cast<float>(p.y()),
                         static_cast<float>(p.z()), static_cast<float>(cloud.labels[i])});
    }
    out.assign(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  write_file(path, out);
}

LabelImage read_label_image(const fs::path& path, int num_classes) {
  RawImage raw = read_raw_image(path);
  if (raw.width < 2 || raw.height < 2) {
    throw ParseError(path.string(), 0, "label images must be at least 2x2");
  }
  const int top = *std::max_element(raw.pixels.begin(), raw.pixels.end());
  if (num_classes <= 0) {
    num_classes = std::max(2, top + 1);
  } else if (top >= num_classes) {
    throw LabelRangeError(path.string() + ": label " + std::to_string(top) + " >= " +
                          std::to_string(num_classes) + " classes");
  }
  return LabelImage(raw.width, raw.height, num_classes, std::move(raw.pixels));
}

void write_label_image(const LabelImage& image, const fs::path& path) {
  if (lower_extension(path) == ".png") {
    write_png(image, path);
  } else {
    write_pgm(image, path);
  }
}

CameraIntrinsics read_intrinsics(const fs::path& path) {
  return intrinsics_from_json(parse_json(path), path);
}

void write_intrinsics(const CameraIntrinsics& K, const fs::path& path) {
  write_file(path, to_text(intrinsics_json(K)));
}

RigidTransform read_transform(const fs::path& path) {
  const json j = parse_json(path);
  const json& m = j.is_object() ? j.contains("matrix") ? j.at("matrix") : j.at("transform") : j;
  try {
    return RigidTransform::from_matrix(matrix_from_json(m, path));
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void write_transform(const RigidTransform& T, const fs::path& path) {
  write_file(path, to_text(json{{"matrix", matrix_json(T.matrix())}}));
}

LidarGeometry read_lidar_geometry(const fs::path& path) {
  const json j = parse_json(path);
  LidarGeometry g;
  g.channels = field<int>(j, "channels", path);
  g.ring_points = field<int>(j, "ring_points", path);
  g.fov_up_deg = field<double>(j, "fov_up_deg", path);
  g.fov_down_deg = field<double>(j, "fov_down_deg", path);
  g.validate();
  return g;
}

void write_lidar_geometry(const LidarGeometry& g, const fs::path& path) {
  write_file(path, to_text(json{{"channels", g.channels},
                                {"ring_points", g.ring_points},
                                {"fov_up_deg", g.fov_up_deg},
                                {"fov_down_deg", g.fov_down_deg}}));
}

std::string config_hash(const CalibConfig& cfg) {
  std::ostringstream s;
  s.precision(17);
  s << cfg.lr_theta << ' ' << cfg.lr_pose << ' ' << cfg.batch_size << ' ' << cfg.max_iters
    << ' ' << cfg.decay_every << ' ' << cfg.lr_decay << ' ' << cfg.convergence_window << ' '
    << cfg.convergence_tol << ' ' << cfg.hidden << ' ' << cfg.marginal_grad << ' ' << cfg.seed;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

CalibrationFile make_calibration_file(const CalibrationResult& result,
                                      const CameraIntrinsics& K, const CalibConfig& cfg,
                                      const std::optional<RigidTransform>& reference) {
  CalibrationFile f;
  f.transform = result.transform;
  f.v = result.v_final;
  f.intrinsics = K;
  f.seed = cfg.seed;
  f.config_hash = config_hash(cfg);
  f.mi_final = result.best_mi;
  f.iterations = result.iterations_run;
  f.converged = result.converged;
  f.wall_time = result.wall_time;
  f.mi_trace = result.mi_trace;
  if (reference) f.reference_error = pose_error(result.transform, *reference);
  return f;
}

std::string result_to_json(const CalibrationFile& f) {
  json v = json::array();
  for (int i = 0; i < 6; ++i) v.push_back(f.v.vector()[i]);
  json j;
  j["schema_version"] = kSchemaVersion;
  j["transform"] = matrix_json(f.transform.matrix());
  j["v"] = v;
  j["intrinsics"] = intrinsics_json(f.intrinsics);
  j["metadata"] = {{"seed", f.seed},
                   {"config_hash", f.config_hash},
                   {"mi_final", f.mi_final},
                   {"iterations", f.iterations},
                   {"converged", f.converged},
                   {"wall_time", f.wall_time}};
  if (f.reference_error) {
    j["reference"] = {{"rot_deg", f.reference_error->rot_deg},
                      {"trans_m", f.reference_error->trans_m}};
  }
  j["mi_trace"] = f.mi_trace;
  return to_text(j);
}

void write_result(const CalibrationFile& file, const fs::path& path) {
  write_file(path, result_to_json(file));
}

CalibrationFile read_result(const fs::path& path) {
  const json j = parse_json(path);
  for (const char* key : {"schema_version", "transform", "v", "intrinsics", "metadata",
                          "mi_trace"}) {
    if (!j.is_object() || !j.contains(key)) {
      throw SchemaVersionError(path.string() + ": missing field '" + key + "'");
    }
  }
  if (j.at("schema_version") != kSchemaVersion) {
    throw SchemaVersionError(path.string() + ": schema_version " +
                             j.at("schema_version").dump() + ", expected " +
                             std::to_string(kSchemaVersion));
  }
  const json& meta = j.at("metadata");
  for (const char* key : {"seed", "config_hash", "mi_final", "iterations", "converged",
                          "wall_time"}) {
    if (!meta.contains(key)) {
      throw SchemaVersionError(path.string() + ": missing field 'metadata." + key + "'");
    }
  }
  CalibrationFile f;
  try {
    f.transform = RigidTransform::from_matrix(matrix_from_json(j.at("transform"), path));
    const auto v = j.at("v").get<std::vector<double>>();
    if (v.size() != 6) throw ParseError(path.string(), 0, "v must have 6 entries");
    f.v = Se3Params(Vector6d(v.data()));
    f.intrinsics = intrinsics_from_json(j.at("intrinsics"), path);
    f.seed = meta.at("seed").get<std::uint64_t>();
    f.config_hash = meta.at("config_hash").get<std::string>();
    f.mi_final = meta.at("mi_final").get<double>();
    f.iterations = meta.at("iterations").get<int>();
    f.converged = meta.at("converged").get<bool>();
    f.wall_time = meta.at("wall_time").get<double>();
    f.mi_trace = j.at("mi_trace").get<std::vector<double>>();
    if (j.contains("reference")) {
      f.reference_error = PoseError{j["reference"].at("rot_deg").get<double>(),
                                    j["reference"].at("trans_m").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  const double gap = (exp_se3(f.v).matrix() - f.transform.matrix()).cwiseAbs().maxCoeff();
  if (gap > 1e-9) {
    throw ParseError(path.string(), 0, "transform and v disagree by " + format_number(gap));
  }
  return f;
}

void write_scene_dir(const fs::path& dir, const std::vector<PosedScene>& scenes,
                     const LidarGeometry& lidar) {
  if (scenes.empty()) throw InvalidArgument("no scenes to write");
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_intrinsics(scenes.front().K, dir / "intrinsics.json");
  write_lidar_geometry(lidar, dir / "lidar.json");
  write_file(dir / "scene.json",
             to_text(json{{"num_classes", scenes.front().num_classes()},
                          {"frames", scenes.size()}}));
  if (scenes.front().T_true) write_transform(*scenes.front().T_true, dir / "reference.json");
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    write_point_cloud(scenes[k].cloud, dir / "frames" / frame_name(k, ".bin"));
    write_label_image(scenes[k].image, dir / "images" / frame_name(k, ".png"));
  }
}

SceneSet read_scene_dir(const fs::path& dir, int num_classes) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  SceneSet set;
  const CameraIntrinsics K = read_intrinsics(dir / "intrinsics.json");
  if (fs::exists(dir / "lidar.json")) set.lidar = read_lidar_geometry(dir / "lidar.json");
  if (num_classes <= 0 && fs::exists(dir / "scene.json")) {
    num_classes = field<int>(parse_json(dir / "scene.json"), "num_classes", dir / "scene.json");
  }
  set.scenes = load_scenes(expand_paths((dir / "frames").string()),
                           expand_paths((dir / "images").string()), {}, K, num_classes);
  if (fs::exists(dir / "reference.json")) {
    set.reference = read_transform(dir / "reference.json");
    for (auto& s : set.scenes) s.T_true = set.reference;
  }
  return set;
}

std::vector<PosedScene> load_scenes(const std::vector<fs::path>& clouds,
                                    const std::vector<fs::path>& images,
                                    const std::vector<fs::path>& sidecars,
                                    const CameraIntrinsics& K, int num_classes) {
  if (clouds.empty()) throw InvalidArgument("no point cloud files given");
  if (clouds.size() != images.size()) {
    throw InvalidArgument(std::to_string(clouds.size()) + " clouds but " +
                          std::to_string(images.size()) + " images");
  }
  if (!sidecars.empty() && sidecars.size() != clouds.size()) {
    throw InvalidArgument("label sidecars must match the clouds one to one");
  }
  K.validate();
  std::vector<PointCloud> pcs;
  std::vector<RawImage> raws;
  int top = 0;
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    std::optional<fs::path> side;
    if (!sidecars.empty()) side = sidecars[k];
    pcs.push_back(read_point_cloud(clouds[k], CloudFormat::Auto, side, num_classes));
    raws.push_back(read_raw_image(images[k]));
    if (raws.back().width != K.width || raws.back().height != K.height) {
      throw InvalidArgument(images[k].string() + " does not match the intrinsics size");
    }
    top = std::max(top, *std::max_element(pcs.back().labels.begin(), pcs.back().labels.end()));
    top = std::max<int>(top, *std::max_element(raws.back().pixels.begin(),
                                               raws.back().pixels.end()));
  }
  if (num_classes <= 0) {
    num_classes = std::max(2, top + 1);
  } else if (top >= num_classes) {
    throw LabelRangeError("label " + std::to_string(top) + " >= " +
                          std::to_string(num_classes) + " classes");
  }
  std::vector<PosedScene> scenes;
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    PosedScene s;
    s.cloud = std::move(pcs[k]);
    s.image = LabelImage(raws[k].width, raws[k].height, num_classes, std::move(raws[k].pixels));
    s.K = K;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<fs::path> expand_paths(const std::string& pattern) {
  std::vector<fs::path> out;
  const fs::path p(pattern);
  std::error_code ec;
  if (fs::is_directory(p, ec)) {
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file()) out.push_back(e.path());
    }
  } else if (pattern.find_first_of("*?") == std::string::npos) {
    if (!fs::exists(p, ec)) throw IoError(pattern + " does not exist");
    out.push_back(p);
  } else {
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    const std::string name = p.filename().string();
    if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && glob_match(name.c_str(), e.path().filename().c_str())) {
        out.push_back(e.path());
      }
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no files match " + pattern);
  return out;
}

}  // namespace semcal
