#include "h23d/fusion.hpp"

#include <cmath>

#include "h23d/error.hpp"

namespace h23d {

namespace {
void require_rows(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError(std::string(what) + ": misaligned point rows " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

void require_width(const Tensor& t, std::size_t w, const char* what) {
  if (t.rank() != 2 || t.dim(1) != w)
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(w) + ", got " +
                     shape_str(t.shape()));
}

Sequential gate_net(std::size_t in, std::size_t out, const std::string& name,
                    std::mt19937_64& rng, double mom) {
  std::vector<Layer> ls;
  ls.emplace_back(LayerSpec::fc(in, out, false), name + ".fc", rng);
  ls.emplace_back(LayerSpec::bn(out, mom), name + ".bn", rng);
  ls.emplace_back(LayerSpec::sigmoid(), name + ".sigmoid", rng);
  return Sequential(std::move(ls));
}
}  // namespace

PointEncoder::PointEncoder(std::size_t in_width, std::size_t hidden, std::size_t out_width,
                           std::mt19937_64& rng, double bn_momentum) {
  Sequential a = fc_bn_relu(in_width, hidden, "enc.l0", rng, bn_momentum);
  Sequential b = fc_bn_relu(hidden, out_width, "enc.l1", rng, bn_momentum);
  for (Layer& l : b.layers()) a.layers().push_back(std::move(l));
  net_ = std::move(a);
}

BevInputEncoder::BevInputEncoder(std::size_t c_raw, std::size_t c_pv, std::size_t c_out,
                                 std::mt19937_64& rng, double bn_momentum)
    : c_raw_(c_raw), c_pv_(c_pv), c_out_(c_out),
      net_(fc_bn_relu(c_raw + c_pv, c_out, "bev_in", rng, bn_momentum)) {}

Tensor BevInputEncoder::forward(const Tensor& f_raw, const Tensor& f_pv, Mode mode) {
  require_rows(f_raw, f_pv, "bev_input_features");
  require_width(f_raw, c_raw_, "bev_input_features f_raw");
  require_width(f_pv, c_pv_, "bev_input_features f_pv");
  const Tensor* parts[2] = {&f_raw, &f_pv};
  return net_.forward(concat(parts), mode);
}

std::pair<Tensor, Tensor> BevInputEncoder::backward(const Tensor& g) {
  const std::size_t widths[2] = {c_raw_, c_pv_};
  auto parts = concat_backward(net_.backward(g), widths);
  return {std::move(parts[0]), std::move(parts[1])};
}

Bgmvf::Bgmvf(std::size_t c_pv, std::size_t c_bev, std::size_t c_h, std::mt19937_64& rng,
             double bn_momentum)
    : c_pv_(c_pv), c_bev_(c_bev), c_h_(c_h),
      gate_pv_net_(gate_net(c_bev, c_pv, "bgmvf.gate_pv", rng, bn_momentum)),
      gate_bev_net_(gate_net(c_pv, c_bev, "bgmvf.gate_bev", rng, bn_momentum)),
      proj_(fc_bn_relu(c_pv + c_bev, c_h, "bgmvf.proj", rng, bn_momentum)) {}

Tensor Bgmvf::forward(const Tensor& f_pv, const Tensor& f_bev, Mode mode) {
  require_rows(f_pv, f_bev, "bgmvf");
  require_width(f_pv, c_pv_, "bgmvf f_pv");
  require_width(f_bev, c_bev_, "bgmvf f_bev");
  f_pv_ = f_pv;
  f_bev_ = f_bev;
  gate_pv_ = gate_pv_net_.forward(f_bev, mode);
  gate_bev_ = gate_bev_net_.forward(f_pv, mode);
  const Tensor a = mul(f_pv, gate_pv_);
  const Tensor b = mul(f_bev, gate_bev_);
  const Tensor* parts[2] = {&a, &b};
  return proj_.forward(concat(parts), mode);
}

std::pair<Tensor, Tensor> Bgmvf::backward(const Tensor& g) {
  const std::size_t widths[2] = {c_pv_, c_bev_};
  auto parts = concat_backward(proj_.backward(g), widths);
  auto [d_pv, d_gpv] = mul_backward(parts[0], f_pv_, gate_pv_);
  auto [d_bev, d_gbev] = mul_backward(parts[1], f_bev_, gate_bev_);
  d_pv = add(d_pv, gate_bev_net_.backward(d_gbev));
  d_bev = add(d_bev, gate_pv_net_.backward(d_gpv));
  return {std::move(d_pv), std::move(d_bev)};
}

void Bgmvf::collect_params(std::vector<Param*>& out) {
  gate_pv_net_.collect_params(out);
  gate_bev_net_.collect_params(out);
  proj_.collect_params(out);
}

void Bgmvf::collect_buffers(std::vector<Param*>& out) {
  gate_pv_net_.collect_buffers(out);
  gate_bev_net_.collect_buffers(out);
  proj_.collect_buffers(out);
}

H3DGrid H3DGrid::from_views(const GridSpec& bev, const GridSpec& pv) {
  bev.validate();
  pv.validate();
  return {bev.first, bev.second, pv.second};
}

std::int64_t H3DGrid::cell_count() const {
  const auto d = dims();
  return d[0] * d[1] * d[2];
}

std::int64_t H3DGrid::linear_id(const std::array<std::int64_t, 3>& ijk) const {
  const auto d = dims();
  return (ijk[0] * d[1] + ijk[1]) * d[2] + ijk[2];
}

std::array<std::int64_t, 3> H3DGrid::triple(std::int64_t id) const {
  const auto d = dims();
  return {id / (d[1] * d[2]), (id / d[2]) % d[1], id % d[2]};
}

std::array<double, 3> H3DGrid::center(const std::array<std::int64_t, 3>& ijk) const {
  return {x.cell_center(ijk[0]), y.cell_center(ijk[1]), z.cell_center(ijk[2])};
}

std::array<std::int64_t, 3> H3DGrid::cell_of(const std::array<double, 3>& p) const {
  return {static_cast<std::int64_t>(std::floor(continuous_index(p[0], x))),
          static_cast<std::int64_t>(std::floor(continuous_index(p[1], y))),
          static_cast<std::int64_t>(std::floor(continuous_index(p[2], z)))};
}

bool H3DGrid::contains(const std::array<std::int64_t, 3>& ijk) const {
  const auto d = dims();
  for (int a = 0; a < 3; ++a)
    if (ijk[a] < 0 || ijk[a] >= d[a]) return false;
  return true;
}

H3DVoxels h3d_voxelize(const Tensor& f_h3d, std::span<const ProjectedIndex> bev,
                       std::span<const ProjectedIndex> pv, const H3DGrid& grid) {
  if (f_h3d.rank() != 2 || bev.size() != f_h3d.dim(0) || pv.size() != f_h3d.dim(0))
    throw ShapeError("h3d_voxelize: index lists do not match the point rows");
  std::vector<std::int64_t> ids(bev.size());
  for (std::size_t n = 0; n < bev.size(); ++n) {
    const std::array<std::int64_t, 3> t{bev[n].quantized[0], bev[n].quantized[1],
                                        pv[n].quantized[1]};
    if (!grid.contains(t))
      throw OutOfRangeError("h3d_voxelize: point " + std::to_string(n) +
                            " has an index outside the 3D grid");
    ids[n] = grid.linear_id(t);
  }
  H3DVoxels v;
  v.grid = grid;
  v.sparse = scatter_max(f_h3d, ids, grid.cell_count());
  v.triples.reserve(v.sparse.size());
  v.centers.reserve(v.sparse.size());
  for (std::int64_t id : v.sparse.cell_ids) {
    v.triples.push_back(grid.triple(id));
    v.centers.push_back(grid.center(v.triples.back()));
  }
  return v;
}

}  // namespace h23d
