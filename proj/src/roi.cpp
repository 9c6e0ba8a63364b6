#include "h23d/roi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

#include "h23d/error.hpp"
#include "h23d/parallel.hpp"

namespace h23d {

namespace {
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::int64_t manhattan(const std::array<std::int64_t, 3>& a,
                       const std::array<std::int64_t, 3>& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}
}  // namespace

std::vector<Vec3> gen_grid_points(const Box3D& box, std::size_t G) {
  box.validate();
  if (G == 0) throw ConfigError("gen_grid_points: partition must be positive");
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  std::vector<Vec3> pts;
  pts.reserve(G * G * G);
  const double g = static_cast<double>(G);
  for (std::size_t a = 0; a < G; ++a)
    for (std::size_t b = 0; b < G; ++b)
      for (std::size_t k = 0; k < G; ++k) {
        const double lx = ((a + 0.5) / g - 0.5) * box.l;
        const double ly = ((b + 0.5) / g - 0.5) * box.w;
        const double lz = ((k + 0.5) / g - 0.5) * box.h;
        pts.push_back({box.x + c * lx - s * ly, box.y + s * lx + c * ly, box.z + lz});
      }
  return pts;
}

VoxelLookup::VoxelLookup(const H3DVoxels& voxels) : voxels_(&voxels) {
  index_.reserve(voxels.size() * 2);
  for (std::size_t i = 0; i < voxels.size(); ++i)
    index_.emplace(voxels.grid.linear_id(voxels.triples[i]), i);
}

std::optional<std::size_t> VoxelLookup::find(const std::array<std::int64_t, 3>& ijk) const {
  if (!voxels_->grid.contains(ijk)) return std::nullopt;
  auto it = index_.find(voxels_->grid.linear_id(ijk));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t manhattan_ball_size(int r) {
  std::size_t n = 0;
  for (int dx = -r; dx <= r; ++dx)
    for (int dy = -(r - std::abs(dx)); dy <= r - std::abs(dx); ++dy)
      n += static_cast<std::size_t>(2 * (r - std::abs(dx) - std::abs(dy)) + 1);
  return n;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= k) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::uint64_t query_seed(std::uint64_t seed, std::uint64_t roi, std::uint64_t level,
                         std::uint64_t point) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ roi);
  h = splitmix64(h ^ level);
  return splitmix64(h ^ point);
}

QueryResult voxel_query(const Vec3& grid_point, const VoxelLookup& lookup, int radius,
                        std::size_t max_k, std::uint64_t seed) {
  if (radius <= 0) throw ConfigError("voxel_query: radius must be positive");
  const H3DVoxels& vox = lookup.voxels();
  const auto centre = vox.grid.cell_of(grid_point);
  QueryResult q;
  std::vector<std::size_t> found;
  const std::size_t ball = manhattan_ball_size(radius);
  if (vox.size() <= ball) {
    q.probes = vox.size();
    for (std::size_t i = 0; i < vox.size(); ++i)
      if (manhattan(vox.triples[i], centre) <= radius) found.push_back(i);
  } else {
    q.probes = ball;
    for (int dx = -radius; dx <= radius; ++dx) {
      const int ry = radius - std::abs(dx);
      for (int dy = -ry; dy <= ry; ++dy) {
        const int rz = ry - std::abs(dy);
        for (int dz = -rz; dz <= rz; ++dz)
          if (auto hit = lookup.find({centre[0] + dx, centre[1] + dy, centre[2] + dz}))
            found.push_back(*hit);
      }
    }
    std::sort(found.begin(), found.end());
  }
  q.candidates = found.size();
  for (std::size_t s : sample_indices(found.size(), max_k, seed)) {
    const std::size_t v = found[s];
    const auto& c = vox.centers[v];
    q.neighbors.push_back(
        {v, {c[0] - grid_point[0], c[1] - grid_point[1], c[2] - grid_point[2]}});
  }
  return q;
}

GridAggregator::GridAggregator(std::size_t c_voxel, std::size_t c_out,
                               const std::string& name, std::mt19937_64& rng,
                               double bn_momentum)
    : c_voxel_(c_voxel), c_out_(c_out),
      mlp_(fc_bn_relu(c_voxel + 3, c_out, name, rng, bn_momentum)) {}

Tensor GridAggregator::forward(std::span<const QueryResult> queries,
                               const Tensor& voxel_features, Mode mode) {
  if (voxel_features.rank() != 2 || voxel_features.dim(1) != c_voxel_)
    throw ShapeError("aggregate_grid: expected voxel features {M, " +
                     std::to_string(c_voxel_) + "}, got " + shape_str(voxel_features.shape()));
  n_voxels_ = voxel_features.dim(0);
  n_queries_ = queries.size();
  std::vector<std::size_t> start(queries.size() + 1, 0);
  for (std::size_t q = 0; q < queries.size(); ++q)
    start[q + 1] = start[q] + queries[q].neighbors.size();
  const std::size_t n_entries = start.back();
  entry_voxel_.assign(n_entries, 0);
  Tensor in({std::max<std::size_t>(n_entries, 1), c_voxel_ + 3});
  parallel_for(0, queries.size(), [&](std::size_t q) {
    for (std::size_t j = 0; j < queries[q].neighbors.size(); ++j) {
      const Neighbor& nb = queries[q].neighbors[j];
      if (nb.voxel >= n_voxels_) throw ShapeError("aggregate_grid: voxel index out of range");
      const std::size_t e = start[q] + j;
      entry_voxel_[e] = nb.voxel;
      auto row = in.row(e);
      auto src = voxel_features.row(nb.voxel);
      std::copy(src.begin(), src.end(), row.begin());
      for (int a = 0; a < 3; ++a) row[c_voxel_ + a] = nb.offset[a];
    }
  }, 64);

  Tensor out({queries.size(), c_out_});
  argmax_.assign(queries.size() * c_out_, kNone);
  ran_mlp_ = n_entries > 0;
  if (!ran_mlp_) return out;
  // A single row cannot supply batch statistics; it uses the running ones.
  const Mode m = n_entries < 2 ? Mode::eval : mode;
  const Tensor h = mlp_.forward(in, m);
  parallel_for(0, queries.size(), [&](std::size_t q) {
    for (std::size_t e = start[q]; e < start[q + 1]; ++e)
      for (std::size_t c = 0; c < c_out_; ++c) {
        std::size_t& best = argmax_[q * c_out_ + c];
        if (best == kNone || h.at(e, c) > h.at(best, c)) best = e;
      }
    for (std::size_t c = 0; c < c_out_; ++c) {
      const std::size_t e = argmax_[q * c_out_ + c];
      if (e != kNone) out.at(q, c) = h.at(e, c);
    }
  }, 64);
  return out;
}

Tensor GridAggregator::backward(const Tensor& grad) {
  require_shape(grad, {n_queries_, c_out_}, "aggregate_grid backward");
  Tensor grad_vox({n_voxels_, c_voxel_});
  if (!ran_mlp_) return grad_vox;
  const std::size_t n_entries = entry_voxel_.size();
  Tensor gh({n_entries, c_out_});
  parallel_for(0, c_out_, [&](std::size_t c) {
    for (std::size_t q = 0; q < n_queries_; ++q) {
      const std::size_t e = argmax_[q * c_out_ + c];
      if (e != kNone) gh.at(e, c) += grad.at(q, c);
    }
  });
  const Tensor gin = mlp_.backward(gh);
  parallel_for(0, c_voxel_, [&](std::size_t c) {
    for (std::size_t e = 0; e < n_entries; ++e) grad_vox.at(entry_voxel_[e], c) += gin.at(e, c);
  });
  return grad_vox;
}

Tensor aggregate_grid(const QueryResult& query, const Tensor& voxel_features,
                      GridAggregator& agg, Mode mode) {
  Tensor out = agg.forward(std::span<const QueryResult>(&query, 1), voxel_features, mode);
  return out.reshaped({agg.out_channels()});
}

void RoiPoolConfig::validate() const {
  if (coarse_grid == 0 || fine_grid == 0 || fine_grid % coarse_grid != 0)
    throw ConfigError("roi pool: fine partition must be a positive multiple of the coarse one");
  if (coarse_radius <= 0 || fine_radius <= 0)
    throw ConfigError("roi pool: query radii must be positive");
  if (max_neighbors == 0) throw ConfigError("roi pool: max neighbours must be positive");
  if (coarse_channels == 0 || fine_channels == 0)
    throw ConfigError("roi pool: channel widths must be positive");
}

std::vector<QueryResult> query_rois(std::span<const Box3D> rois, const VoxelLookup& lookup,
                                    std::size_t G, int radius, std::size_t max_k,
                                    std::uint64_t seed, std::uint64_t level) {
  const std::size_t per = G * G * G;
  std::vector<QueryResult> out(rois.size() * per);
  parallel_for(0, rois.size(), [&](std::size_t r) {
    const auto pts = gen_grid_points(rois[r], G);
    for (std::size_t g = 0; g < per; ++g)
      out[r * per + g] = voxel_query(pts[g], lookup, radius, max_k, query_seed(seed, r, level, g));
  });
  return out;
}

HvRoiPool::HvRoiPool(std::size_t c_voxel, const RoiPoolConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  coarse_ = GridAggregator(c_voxel, cfg.coarse_channels, "roi.coarse", rng, cfg.bn_momentum);
  fine_ = GridAggregator(c_voxel, cfg.fine_channels, "roi.fine", rng, cfg.bn_momentum);
}

std::size_t HvRoiPool::parent_cell(std::size_t f) const {
  const std::size_t G = cfg_.fine_grid, g = cfg_.coarse_grid, s = G / g;
  const std::size_t a = f / (G * G), b = (f / G) % G, c = f % G;
  return ((a / s) * g + b / s) * g + c / s;
}

Tensor HvRoiPool::forward(std::span<const Box3D> rois, const H3DVoxels& voxels,
                          std::uint64_t seed, Mode mode) {
  n_rois_ = rois.size();
  const VoxelLookup lookup(voxels);
  const auto qc = query_rois(rois, lookup, cfg_.coarse_grid, cfg_.coarse_radius,
                             cfg_.max_neighbors, seed, 0);
  const auto qf = query_rois(rois, lookup, cfg_.fine_grid, cfg_.fine_radius,
                             cfg_.max_neighbors, seed, 1);
  stats_ = {};
  for (const auto* qs : {&qc, &qf})
    for (const QueryResult& q : *qs) {
      stats_.probes += q.probes;
      stats_.neighbors += q.neighbors.size();
    }
  const Tensor fc = coarse_.forward(qc, voxels.features(), mode);
  const Tensor ff = fine_.forward(qf, voxels.features(), mode);
  const std::size_t nf = cells(), nc = cfg_.coarse_grid * cfg_.coarse_grid * cfg_.coarse_grid;
  const std::size_t cc = cfg_.coarse_channels, cf = cfg_.fine_channels;
  Tensor out({n_rois_, nf, cc + cf});
  parallel_for(0, n_rois_, [&](std::size_t r) {
    for (std::size_t f = 0; f < nf; ++f) {
      double* dst = out.data().data() + (r * nf + f) * (cc + cf);
      auto src_c = fc.row(r * nc + parent_cell(f));
      auto src_f = ff.row(r * nf + f);
      std::copy(src_c.begin(), src_c.end(), dst);
      std::copy(src_f.begin(), src_f.end(), dst + cc);
    }
  });
  return out;
}

Tensor HvRoiPool::backward(const Tensor& grad) {
  const std::size_t nf = cells(), nc = cfg_.coarse_grid * cfg_.coarse_grid * cfg_.coarse_grid;
  const std::size_t cc = cfg_.coarse_channels, cf = cfg_.fine_channels;
  require_shape(grad, {n_rois_, nf, cc + cf}, "hv_roi_pool backward");
  Tensor gc({n_rois_ * nc, cc});
  Tensor gf({n_rois_ * nf, cf});
  parallel_for(0, n_rois_, [&](std::size_t r) {
    for (std::size_t f = 0; f < nf; ++f) {
      const double* src = grad.data().data() + (r * nf + f) * (cc + cf);
      auto dc = gc.row(r * nc + parent_cell(f));
      for (std::size_t c = 0; c < cc; ++c) dc[c] += src[c];
      auto df = gf.row(r * nf + f);
      for (std::size_t c = 0; c < cf; ++c) df[c] = src[cc + c];
    }
  });
  return add(coarse_.backward(gc), fine_.backward(gf));
}

void HvRoiPool::collect_params(std::vector<Param*>& out) {
  coarse_.collect_params(out);
  fine_.collect_params(out);
}

void HvRoiPool::collect_buffers(std::vector<Param*>& out) {
  coarse_.collect_buffers(out);
  fine_.collect_buffers(out);
}

DetectHead::DetectHead(std::size_t in_width, std::size_t h1, std::size_t h2,
                       std::mt19937_64& rng, double bn_momentum)
    : in_width_(in_width) {
  Sequential a = fc_bn_relu(in_width, h1, "head.fc0", rng, bn_momentum);
  Sequential b = fc_bn_relu(h1, h2, "head.fc1", rng, bn_momentum);
  for (Layer& l : b.layers()) a.layers().push_back(std::move(l));
  trunk_ = std::move(a);
  conf_ = Layer(LayerSpec::fc(h2, 1), "head.conf", rng);
  reg_ = Layer(LayerSpec::fc(h2, 7), "head.reg", rng);
}

HeadOutput DetectHead::forward(const Tensor& roi_features, Mode mode) {
  if (roi_features.rank() != 2 || roi_features.dim(1) != in_width_)
    throw ShapeError("detect_head: expected {R, " + std::to_string(in_width_) + "}, got " +
                     shape_str(roi_features.shape()));
  const Tensor t = trunk_.forward(roi_features, mode);
  return {conf_.forward(t, mode), reg_.forward(t, mode)};
}

Tensor DetectHead::backward(const Tensor& grad_conf, const Tensor& grad_reg) {
  return trunk_.backward(add(conf_.backward(grad_conf), reg_.backward(grad_reg)));
}

void DetectHead::collect_params(std::vector<Param*>& out) {
  trunk_.collect_params(out);
  conf_.collect_params(out);
  reg_.collect_params(out);
}

}  // namespace h23d
