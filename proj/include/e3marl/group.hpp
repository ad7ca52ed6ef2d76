#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "e3marl/rng.hpp"

// Representation theory of E(3) = O(3) x T(3) for feature degrees l <= 1.
//
// Conventions:
//  * l = 1 components are stored in (x, y, z) order, so the degree-1
//    representation matrix of a proper rotation is the rotation matrix
//    itself (no real-spherical-harmonic permutation).
//  * Spherical harmonics use the unnormalized "component" convention:
//    Y0 = 1, Y1 = unit direction vector.
//  * Parity is explicit. Odd degree-1 blocks transform by R, even
//    degree-1 blocks (pseudovectors, e.g. cross products) by det(R)*R.

namespace e3marl {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct GroupElement {
  Mat3 rotation = Mat3::Identity();   // orthogonal, det +-1
  Vec3 translation = Vec3::Zero();

  static GroupElement identity() { return {}; }

  GroupElement inverse() const {
    GroupElement inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  // Action on a position: R x + t.
  Vec3 apply_point(const Vec3& x) const { return rotation * x + translation; }
  // Action on a displacement/velocity/force: R v.
  Vec3 apply_vector(const Vec3& v) const { return rotation * v; }

  double det() const { return rotation.determinant(); }
};

// Composition g1 o g2 ("apply g2 first"): R = R1 R2, t = R1 t2 + t1.
inline GroupElement compose(const GroupElement& g1, const GroupElement& g2) {
  GroupElement g;
  g.rotation = g1.rotation * g2.rotation;
  g.translation = g1.rotation * g2.translation + g1.translation;
  return g;
}

inline bool is_orthogonal(const Mat3& r, double tol = 1e-12) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
}

inline bool is_valid_group_element(const GroupElement& g, double tol = 1e-12) {
  return is_orthogonal(g.rotation, tol) &&
         std::abs(std::abs(g.rotation.determinant()) - 1.0) <= tol &&
         g.translation.allFinite();
}

// Proper rotation Rz(gamma) * Ry(beta) * Rx(alpha), zero translation.
inline GroupElement rotation_from_euler(double alpha, double beta,
                                        double gamma) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma)) {
    throw std::invalid_argument("rotation_from_euler: non-finite angle");
  }
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double cb = std::cos(beta), sb = std::sin(beta);
  const double cg = std::cos(gamma), sg = std::sin(gamma);
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cg, -sg, 0, sg, cg, 0, 0, 0, 1;
  GroupElement g;
  g.rotation = rz * ry * rx;
  return g;
}

inline GroupElement rotation_z(double angle) {
  return rotation_from_euler(0.0, 0.0, angle);
}

// Reflection through the x-y plane: diag(1, 1, -1), det = -1.
inline GroupElement reflection_xy() {
  GroupElement g;
  g.rotation = Vec3(1, 1, -1).asDiagonal();
  return g;
}

inline GroupElement translation(const Vec3& t) {
  GroupElement g;
  g.translation = t;
  return g;
}

inline GroupElement random_rotation(Rng& rng) {
  return rotation_from_euler(rng.uniform(-M_PI, M_PI),
                             rng.uniform(-M_PI, M_PI),
                             rng.uniform(-M_PI, M_PI));
}

// Random element with optional reflection and translation parts; the
// default ranges match the verification batteries (translations in
// [-10, 10]^3).
inline GroupElement random_element(Rng& rng, bool allow_reflection = true,
                                   double translation_range = 10.0) {
  GroupElement g = random_rotation(rng);
  if (allow_reflection && rng.uniform() < 0.5) {
    g = compose(g, reflection_xy());
  }
  for (int k = 0; k < 3; ++k) {
    g.translation[k] = rng.uniform(-translation_range, translation_range);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Irreps and steerable vectors

enum class Parity { Even, Odd };

inline Parity operator*(Parity a, Parity b) {
  return a == b ? Parity::Even : Parity::Odd;
}

struct Irrep {
  int l = 0;
  Parity parity = Parity::Even;

  int dim() const { return 2 * l + 1; }
  bool operator==(const Irrep&) const = default;
};

inline std::string to_string(const Irrep& ir) {
  return std::to_string(ir.l) + (ir.parity == Parity::Even ? "e" : "o");
}

struct IrrepBlock {
  std::size_t mult = 1;
  Irrep irrep;
  bool operator==(const IrrepBlock&) const = default;
};

// Ordered direct sum of irrep blocks. The data layout is fixed: blocks in
// list order, channels within a block contiguous, each channel spanning
// (2l+1) components.
struct IrrepSpec {
  std::vector<IrrepBlock> blocks;

  IrrepSpec() = default;
  IrrepSpec(std::initializer_list<IrrepBlock> bs) : blocks(bs) {}

  std::size_t dim() const {
    std::size_t d = 0;
    for (const auto& b : blocks) d += b.mult * b.irrep.dim();
    return d;
  }

  std::size_t block_offset(std::size_t index) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < index; ++i) {
      off += blocks[i].mult * blocks[i].irrep.dim();
    }
    return off;
  }

  bool operator==(const IrrepSpec&) const = default;

  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (i) os << " + ";
      os << blocks[i].mult << "x" << e3marl::to_string(blocks[i].irrep);
    }
    return os.str();
  }
};

inline IrrepSpec concat_specs(const IrrepSpec& a, const IrrepSpec& b) {
  IrrepSpec out = a;
  out.blocks.insert(out.blocks.end(), b.blocks.begin(), b.blocks.end());
  return out;
}

struct SteerableVector {
  IrrepSpec spec;
  Eigen::VectorXd data;

  static SteerableVector zero(const IrrepSpec& spec) {
    return {spec, Eigen::VectorXd::Zero(static_cast<long>(spec.dim()))};
  }
};

// Representation matrix of g for one irrep:
//   (0, even) -> [1]          (0, odd) -> [det R]
//   (1, odd)  -> R            (1, even) -> det(R) * R
inline Eigen::MatrixXd irrep_matrix(const Irrep& ir, const GroupElement& g) {
  if (ir.l == 0) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = ir.parity == Parity::Even ? 1.0 : g.det();
    return m;
  }
  if (ir.l == 1) {
    if (ir.parity == Parity::Odd) return g.rotation;
    return g.det() * g.rotation;
  }
  throw std::invalid_argument("irrep_matrix: unsupported degree l=" +
                              std::to_string(ir.l));
}

// Block-wise application of irrep matrices; translations act trivially on
// features. Scalars stay untouched (D = 1); degree-1 channels are rotated
// in place.
inline SteerableVector transform_steerable(const SteerableVector& v,
                                           const GroupElement& g) {
  if (static_cast<std::size_t>(v.data.size()) != v.spec.dim()) {
    throw std::invalid_argument("transform_steerable: data/spec size mismatch");
  }
  SteerableVector out{v.spec, v.data};
  const double det = g.det();
  std::size_t off = 0;
  for (const auto& b : v.spec.blocks) {
    const int d = b.irrep.dim();
    for (std::size_t c = 0; c < b.mult; ++c) {
      if (b.irrep.l == 0) {
        if (b.irrep.parity == Parity::Odd) out.data[off] = det * v.data[off];
      } else if (b.irrep.l == 1) {
        Vec3 x = v.data.segment<3>(static_cast<long>(off));
        Vec3 y = g.rotation * x;
        if (b.irrep.parity == Parity::Even) y *= det;
        out.data.segment<3>(static_cast<long>(off)) = y;
      } else {
        throw std::invalid_argument("transform_steerable: unsupported degree");
      }
      off += static_cast<std::size_t>(d);
    }
  }
  return out;
}

inline const IrrepSpec& sh_l1_spec() {
  static const IrrepSpec spec{{1, {0, Parity::Even}}, {1, {1, Parity::Odd}}};
  return spec;
}

// Degree <= 1 spherical harmonics of a direction, component convention:
// (1, x^, y^, z^). Depends only on the direction, not the magnitude.
inline SteerableVector spherical_harmonics_l1(const Vec3& direction) {
  const double n = direction.norm();
  if (!(n > 0.0) || !direction.allFinite()) {
    throw std::domain_error("spherical_harmonics_l1: degenerate direction");
  }
  SteerableVector out{sh_l1_spec(), Eigen::VectorXd(4)};
  out.data[0] = 1.0;
  out.data.segment<3>(1) = direction / n;
  return out;
}

// ---------------------------------------------------------------------------
// Clebsch-Gordan tensor products for l <= 1
//
// Allowed degree paths: 0x0->0, 0x1->1, 1x0->1, 1x1->0 (dot),
// 1x1->1 (cross); parity selection p_out = p_a * p_b.

struct CGPath {
  std::size_t a_block = 0;
  std::size_t b_block = 0;
  std::size_t out_block = 0;
};

class CGProduct {
 public:
  // Precomputed per-path layout for the flat weight vector. For each path,
  // weights are indexed (ca * mult_b + cb) * mult_out + co.
  struct Instruction {
    int la, lb, lo;
    std::size_t a_offset, b_offset, out_offset;
    std::size_t mult_a, mult_b, mult_out;
    std::size_t weight_offset;
  };

  // Enumerates every allowed path (deterministic order: by output block,
  // then a block, then b block).
  CGProduct(IrrepSpec a, IrrepSpec b, IrrepSpec out)
      : a_spec_(std::move(a)), b_spec_(std::move(b)), out_spec_(std::move(out)) {
    std::vector<CGPath> paths;
    for (std::size_t o = 0; o < out_spec_.blocks.size(); ++o) {
      for (std::size_t i = 0; i < a_spec_.blocks.size(); ++i) {
        for (std::size_t j = 0; j < b_spec_.blocks.size(); ++j) {
          if (path_allowed(a_spec_.blocks[i].irrep, b_spec_.blocks[j].irrep,
                           out_spec_.blocks[o].irrep)) {
            paths.push_back({i, j, o});
          }
        }
      }
    }
    build(paths);
  }

  // Explicit path list; throws on selection-rule violations.
  CGProduct(IrrepSpec a, IrrepSpec b, IrrepSpec out, std::vector<CGPath> paths)
      : a_spec_(std::move(a)), b_spec_(std::move(b)), out_spec_(std::move(out)) {
    for (const auto& p : paths) {
      if (p.a_block >= a_spec_.blocks.size() ||
          p.b_block >= b_spec_.blocks.size() ||
          p.out_block >= out_spec_.blocks.size()) {
        throw std::invalid_argument("CGProduct: path block index out of range");
      }
      const Irrep& ia = a_spec_.blocks[p.a_block].irrep;
      const Irrep& ib = b_spec_.blocks[p.b_block].irrep;
      const Irrep& io = out_spec_.blocks[p.out_block].irrep;
      if (!path_allowed(ia, ib, io)) {
        throw std::invalid_argument(
            "CGProduct: invalid path " + e3marl::to_string(ia) + " x " +
            e3marl::to_string(ib) + " -> " + e3marl::to_string(io));
      }
    }
    build(paths);
  }

  static bool path_allowed(const Irrep& a, const Irrep& b, const Irrep& out) {
    if (a.l > 1 || b.l > 1 || out.l > 1) return false;
    if (out.parity != a.parity * b.parity) return false;
    if (a.l == 0 && b.l == 0) return out.l == 0;
    if (a.l + b.l == 1) return out.l == 1;
    return out.l == 0 || out.l == 1;  // 1 x 1 -> 0 (dot) or 1 (cross)
  }

  const IrrepSpec& a_spec() const { return a_spec_; }
  const IrrepSpec& b_spec() const { return b_spec_; }
  const IrrepSpec& out_spec() const { return out_spec_; }
  const std::vector<Instruction>& instructions() const { return instructions_; }
  std::size_t weight_count() const { return weight_count_; }

  // out[row] = sum over paths of w * kernel(a_channel, b_channel); bilinear
  // in (a, b), linear in weights. Raw-pointer form shared with the batched
  // autodiff op.
  void apply_raw(const double* a, const double* b, const double* w,
                 double* out) const {
    for (const auto& ins : instructions_) {
      const double* wp = w + ins.weight_offset;
      for (std::size_t ca = 0; ca < ins.mult_a; ++ca) {
        const double* av = a + ins.a_offset + ca * (2 * ins.la + 1);
        for (std::size_t cb = 0; cb < ins.mult_b; ++cb) {
          const double* bv = b + ins.b_offset + cb * (2 * ins.lb + 1);
          for (std::size_t co = 0; co < ins.mult_out; ++co) {
            const double wk = wp[(ca * ins.mult_b + cb) * ins.mult_out + co];
            double* ov = out + ins.out_offset + co * (2 * ins.lo + 1);
            accumulate_kernel(ins.la, ins.lb, ins.lo, wk, av, bv, ov);
          }
        }
      }
    }
  }

  SteerableVector apply(const SteerableVector& a, const SteerableVector& b,
                        std::span<const double> weights) const {
    if (a.spec != a_spec_ || b.spec != b_spec_) {
      throw std::invalid_argument("CGProduct::apply: operand spec mismatch");
    }
    if (weights.size() != weight_count_) {
      throw std::invalid_argument("CGProduct::apply: expected " +
                                  std::to_string(weight_count_) + " weights");
    }
    SteerableVector out = SteerableVector::zero(out_spec_);
    apply_raw(a.data.data(), b.data.data(), weights.data(), out.data.data());
    return out;
  }

  static void accumulate_kernel(int la, int lb, int lo, double w,
                                const double* a, const double* b, double* out) {
    switch (la * 4 + lb * 2 + lo) {
      case 0:  // 0 x 0 -> 0
        out[0] += w * a[0] * b[0];
        break;
      case 3:  // 0 x 1 -> 1
        out[0] += w * a[0] * b[0];
        out[1] += w * a[0] * b[1];
        out[2] += w * a[0] * b[2];
        break;
      case 5:  // 1 x 0 -> 1
        out[0] += w * a[0] * b[0];
        out[1] += w * a[1] * b[0];
        out[2] += w * a[2] * b[0];
        break;
      case 6:  // 1 x 1 -> 0, dot product
        out[0] += w * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
        break;
      case 7:  // 1 x 1 -> 1, cross product
        out[0] += w * (a[1] * b[2] - a[2] * b[1]);
        out[1] += w * (a[2] * b[0] - a[0] * b[2]);
        out[2] += w * (a[0] * b[1] - a[1] * b[0]);
        break;
      default:
        throw std::invalid_argument("CGProduct: unsupported kernel");
    }
  }

 private:
  void build(std::vector<CGPath> paths) {
    instructions_.clear();
    weight_count_ = 0;
    for (const auto& p : paths) {
      const auto& ba = a_spec_.blocks[p.a_block];
      const auto& bb = b_spec_.blocks[p.b_block];
      const auto& bo = out_spec_.blocks[p.out_block];
      Instruction ins;
      ins.la = ba.irrep.l;
      ins.lb = bb.irrep.l;
      ins.lo = bo.irrep.l;
      ins.a_offset = a_spec_.block_offset(p.a_block);
      ins.b_offset = b_spec_.block_offset(p.b_block);
      ins.out_offset = out_spec_.block_offset(p.out_block);
      ins.mult_a = ba.mult;
      ins.mult_b = bb.mult;
      ins.mult_out = bo.mult;
      ins.weight_offset = weight_count_;
      weight_count_ += ba.mult * bb.mult * bo.mult;
      instructions_.push_back(ins);
    }
    paths_ = std::move(paths);
  }

  IrrepSpec a_spec_, b_spec_, out_spec_;
  std::vector<CGPath> paths_;
  std::vector<Instruction> instructions_;
  std::size_t weight_count_ = 0;
};

inline SteerableVector cg_tensor_product(const SteerableVector& a,
                                         const SteerableVector& b,
                                         const IrrepSpec& out_spec,
                                         std::span<const double> weights) {
  CGProduct cg(a.spec, b.spec, out_spec);
  return cg.apply(a, b, weights);
}

}  // namespace e3marl
