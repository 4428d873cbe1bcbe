#include "acda/data.hpp"

#include "acda/archive.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace acda::data {

namespace {

Tensor gather(const FeatureShape& shape, const Matrix& inputs, std::span<const int> rows) {
  const Eigen::Index d = inputs.cols();
  Vector v(static_cast<Eigen::Index>(rows.size()) * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= inputs.rows()) throw ShapeError("dataset: row index out of range");
    v.segment(static_cast<Eigen::Index>(r) * d, d) = inputs.row(rows[r]).transpose();
  }
  return Tensor::constant({static_cast<int>(rows.size()), shape.c, shape.h, shape.w}, std::move(v));
}

std::vector<int> iota_rows(Eigen::Index n) {
  std::vector<int> r(static_cast<std::size_t>(n));
  std::iota(r.begin(), r.end(), 0);
  return r;
}

void check_inputs(const FeatureShape& shape, const Matrix& inputs, std::size_t labels) {
  if (inputs.cols() != static_cast<Eigen::Index>(shape.c) * shape.h * shape.w)
    throw ShapeError("dataset: input width does not match shape " + shape.str());
  if (static_cast<std::size_t>(inputs.rows()) != labels) throw ShapeError("dataset: label count mismatch");
  if (!inputs.allFinite()) throw std::invalid_argument("dataset: non-finite input");
}

}  // namespace

LabeledSet::LabeledSet(FeatureShape shape, Matrix inputs, std::vector<int> labels)
    : shape_(shape), inputs_(std::move(inputs)), labels_(std::move(labels)) {
  check_inputs(shape_, inputs_, labels_.size());
}

Tensor LabeledSet::batch(std::span<const int> rows) const { return gather(shape_, inputs_, rows); }
Tensor LabeledSet::all() const { return batch(iota_rows(inputs_.rows())); }

UnlabeledSet::UnlabeledSet(FeatureShape shape, Matrix inputs, std::vector<int> hidden_labels)
    : shape_(shape), inputs_(std::move(inputs)), hidden_labels_(std::move(hidden_labels)) {
  check_inputs(shape_, inputs_, hidden_labels_.size());
}

Tensor UnlabeledSet::batch(std::span<const int> rows) const { return gather(shape_, inputs_, rows); }
Tensor UnlabeledSet::all() const { return batch(iota_rows(inputs_.rows())); }

void ShiftSpec::validate() const {
  if (!std::isfinite(brightness) || std::abs(brightness) > 1.0)
    throw ConfigError("shift: brightness must lie in [-1, 1]");
  if (!std::isfinite(noise) || noise < 0.0 || noise > 1.0) throw ConfigError("shift: noise must lie in [0, 1]");
  if (!std::isfinite(thickness) || thickness < 0.0 || thickness > 3.0)
    throw ConfigError("shift: thickness must lie in [0, 3]");
}

ShiftSpec ShiftSpec::default_shift() { return {0.4, 0.1, 1.0}; }

// ---- shapes ----------------------------------------------------------------

namespace {

constexpr int kImage = 16;
constexpr double kBaseStroke = 1.0;
constexpr double kBaseNoise = 0.05;

struct Pt {
  double x, y;
};

double segment_distance(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

struct ShapeParams {
  int cls;
  double cx, cy, rx, ry;
};

// Unsigned distance from p to the outline of the shape.
double outline_distance(const ShapeParams& s, Pt p) {
  const double dx = p.x - s.cx, dy = p.y - s.cy;
  switch (s.cls) {
    case 0: {  // rectangle
      const double qx = std::abs(dx) - s.rx, qy = std::abs(dy) - s.ry;
      const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
      return std::abs(outside + std::min(std::max(qx, qy), 0.0));
    }
    case 1: {  // ellipse
      const double r = std::hypot(dx / s.rx, dy / s.ry);
      return std::abs(r - 1.0) * std::min(s.rx, s.ry);
    }
    case 2:  // cross
      return std::min(segment_distance(p, {s.cx - s.rx, s.cy}, {s.cx + s.rx, s.cy}),
                      segment_distance(p, {s.cx, s.cy - s.ry}, {s.cx, s.cy + s.ry}));
    default: {  // triangle, apex up
      const Pt a{s.cx, s.cy - s.ry}, b{s.cx - s.rx, s.cy + s.ry}, c{s.cx + s.rx, s.cy + s.ry};
      return std::min({segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a)});
    }
  }
}

void render(const ShapeParams& s, double stroke, double brightness, double noise_std, std::mt19937_64& rng,
            Eigen::Ref<Eigen::RowVectorXd> out) {
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < kImage; ++y)
    for (int x = 0; x < kImage; ++x) {
      const double d = outline_distance(s, {x + 0.5, y + 0.5});
      const double ink = std::clamp(stroke / 2.0 + 0.5 - d, 0.0, 1.0);
      out[y * kImage + x] = ink + brightness + noise_std * noise(rng);
    }
}

Matrix render_domain(std::mt19937_64& rng, int n, const ShiftSpec& shift, std::vector<int>& labels) {
  std::uniform_real_distribution<double> centre(5.5, 10.5), size(3.0, 5.5), aspect(0.7, 1.0);
  Matrix images(n, kImage * kImage);
  labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int cls = i % kShapeClasses;
    ShapeParams s{cls, centre(rng), centre(rng), 0.0, 0.0};
    const double r = size(rng);
    s.rx = r * aspect(rng);
    s.ry = r * aspect(rng);
    render(s, kBaseStroke + shift.thickness, shift.brightness, kBaseNoise + shift.noise, rng, images.row(i));
    labels[static_cast<std::size_t>(i)] = cls;
  }
  return images;
}

std::mt19937_64 domain_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace

DomainPairDataset make_shapes_dataset(std::uint64_t seed, int n_source, int n_target, const ShiftSpec& shift) {
  shift.validate();
  for (int n : {n_source, n_target})
    if (n < kShapeClasses * 4 || n % kShapeClasses != 0)
      throw ConfigError("shapes dataset: sizes must be multiples of 4 and at least 16");
  const FeatureShape shape{1, kImage, kImage};
  DomainPairDataset ds;
  ds.num_classes = kShapeClasses;
  ds.input_shape = shape;
  ds.class_names = {"rectangle", "ellipse", "cross", "triangle"};

  auto src_rng = domain_rng(seed, 1);
  auto tgt_rng = domain_rng(seed, 2);
  std::vector<int> ys, yt;
  Matrix xs = render_domain(src_rng, n_source, ShiftSpec{}, ys);
  Matrix xt = render_domain(tgt_rng, n_target, shift, yt);
  ds.source = LabeledSet(shape, std::move(xs), std::move(ys));
  ds.target = UnlabeledSet(shape, std::move(xt), std::move(yt));
  return ds;
}

// ---- two moons -------------------------------------------------------------

namespace {

Matrix moons(std::mt19937_64& rng, int n, double rotation_rad, std::vector<int>& labels) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.1);
  const double c = std::cos(rotation_rad), s = std::sin(rotation_rad);
  const double mx = 0.5, my = 0.25;  // centre of the two-moon layout
  Matrix x(n, 2);
  labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    const double t = angle(rng);
    double px = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    px += noise(rng);
    py += noise(rng);
    x(i, 0) = mx + c * (px - mx) - s * (py - my);
    x(i, 1) = my + s * (px - mx) + c * (py - my);
    labels[static_cast<std::size_t>(i)] = cls;
  }
  return x;
}

}  // namespace

DomainPairDataset make_twomoons_dataset(std::uint64_t seed, int n_source, int n_target, double rotation_degrees) {
  if (!(rotation_degrees >= 0.0 && rotation_degrees <= 90.0))
    throw ConfigError("twomoons dataset: rotation must lie in [0, 90] degrees");
  for (int n : {n_source, n_target})
    if (n < 8 || n % 2 != 0) throw ConfigError("twomoons dataset: sizes must be even and at least 8");
  const FeatureShape shape{2, 1, 1};
  DomainPairDataset ds;
  ds.num_classes = 2;
  ds.input_shape = shape;
  ds.class_names = {"upper", "lower"};
  auto src_rng = domain_rng(seed, 1);
  auto tgt_rng = domain_rng(seed, 2);
  std::vector<int> ys, yt;
  Matrix xs = moons(src_rng, n_source, 0.0, ys);
  Matrix xt = moons(tgt_rng, n_target, rotation_degrees * std::numbers::pi / 180.0, yt);
  ds.source = LabeledSet(shape, std::move(xs), std::move(ys));
  ds.target = UnlabeledSet(shape, std::move(xt), std::move(yt));
  return ds;
}

// ---- folders ---------------------------------------------------------------

namespace {

bool is_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  static const std::set<std::string> known{".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".pnm", ".tif", ".tiff"};
  return known.contains(ext);
}

std::vector<std::string> class_dirs(const std::filesystem::path& domain_root) {
  if (!std::filesystem::is_directory(domain_root))
    throw ConfigError("image folder: missing directory " + domain_root.string());
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(domain_root))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

Matrix load_domain(const std::filesystem::path& domain_root, const std::vector<std::string>& classes,
                   FeatureShape shape, std::vector<int>& labels) {
  std::vector<Eigen::RowVectorXd> rows;
  labels.clear();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto dir = domain_root / classes[k];
    if (!std::filesystem::is_directory(dir)) continue;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && is_image(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      cv::Mat img = cv::imread(f.string(), shape.c == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
      if (img.empty()) throw RuntimeFailure("image folder: cannot decode " + f.string());
      if (shape.c == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
      cv::resize(img, img, cv::Size(shape.w, shape.h), 0, 0, cv::INTER_AREA);
      Eigen::RowVectorXd row(static_cast<Eigen::Index>(shape.c) * shape.h * shape.w);
      for (int y = 0; y < shape.h; ++y)
        for (int x = 0; x < shape.w; ++x)
          for (int ch = 0; ch < shape.c; ++ch) {
            const double v = shape.c == 1 ? img.at<unsigned char>(y, x) : img.at<cv::Vec3b>(y, x)[ch];
            row[(static_cast<Eigen::Index>(ch) * shape.h + y) * shape.w + x] = v / 255.0;
          }
      rows.push_back(std::move(row));
      labels.push_back(static_cast<int>(k));
    }
  }
  if (rows.empty()) throw ConfigError("image folder: no images under " + domain_root.string());
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
  return m;
}

}  // namespace

DomainPairDataset load_image_folder(const std::filesystem::path& root, FeatureShape input_shape) {
  if (input_shape.c != 1 && input_shape.c != 3) throw ConfigError("image folder: input channels must be 1 or 3");
  if (input_shape.h < 1 || input_shape.w < 1) throw ConfigError("image folder: input size must be positive");
  const auto classes = class_dirs(root / "source");
  if (classes.size() < 2) throw ConfigError("image folder: need at least two class directories under source/");
  DomainPairDataset ds;
  ds.num_classes = static_cast<int>(classes.size());
  ds.input_shape = input_shape;
  ds.class_names = classes;
  std::vector<int> ys, yt;
  Matrix xs = load_domain(root / "source", classes, input_shape, ys);
  Matrix xt = load_domain(root / "target", classes, input_shape, yt);
  ds.source = LabeledSet(input_shape, std::move(xs), std::move(ys));
  ds.target = UnlabeledSet(input_shape, std::move(xt), std::move(yt));
  return ds;
}

// ---- persistence -----------------------------------------------------------

namespace {

archive::Array matrix_array(const std::string& name, const Matrix& m) {
  return {name, {static_cast<int>(m.rows()), static_cast<int>(m.cols())}, "f32",
          std::vector<double>(m.data(), m.data() + m.size())};
}

archive::Array label_array(const std::string& name, const std::vector<int>& labels) {
  return {name, {static_cast<int>(labels.size())}, "i64", std::vector<double>(labels.begin(), labels.end())};
}

Matrix to_matrix(const archive::Array& a) {
  if (a.shape.size() != 2) throw RuntimeFailure("dataset archive: '" + a.name + "' must be 2-D");
  Matrix m(a.shape[0], a.shape[1]);
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

std::vector<int> to_labels(const archive::Array& a) { return {a.data.begin(), a.data.end()}; }

}  // namespace

void save_dataset(const std::filesystem::path& path, const DomainPairDataset& ds) {
  archive::Archive ar;
  ar.meta = {{"kind", "dataset"},
             {"num_classes", ds.num_classes},
             {"input_shape", {ds.input_shape.c, ds.input_shape.h, ds.input_shape.w}},
             {"class_names", ds.class_names}};
  ar.arrays.push_back(matrix_array("source_inputs", ds.source.inputs()));
  ar.arrays.push_back(label_array("source_labels", ds.source.labels()));
  ar.arrays.push_back(matrix_array("target_inputs", ds.target.inputs()));
  ar.arrays.push_back(label_array("target_labels", ds.target.hidden_labels()));
  archive::write(path, ar);
}

DomainPairDataset load_dataset(const std::filesystem::path& path) {
  const auto ar = archive::read(path);
  if (ar.meta.value("kind", "") != "dataset") throw RuntimeFailure(path.string() + " is not a dataset archive");
  DomainPairDataset ds;
  ds.num_classes = ar.meta.at("num_classes").get<int>();
  const auto s = ar.meta.at("input_shape").get<std::vector<int>>();
  ds.input_shape = {s.at(0), s.at(1), s.at(2)};
  ds.class_names = ar.meta.at("class_names").get<std::vector<std::string>>();
  ds.source = LabeledSet(ds.input_shape, to_matrix(ar.get("source_inputs")), to_labels(ar.get("source_labels")));
  ds.target = UnlabeledSet(ds.input_shape, to_matrix(ar.get("target_inputs")), to_labels(ar.get("target_labels")));
  return ds;
}

}  // namespace acda::data
