/*
 * Copyright 2026 The glasu Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "glasu/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "glasu/error.hpp"

namespace glasu {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::uint8_t u8() {
    need(1);
    return byte(pos_++);
  }
  Matrix matrix() {
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    need(static_cast<std::size_t>(rows) * cols * 8);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = f64();
    return m;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::uint8_t byte(std::size_t i) const { return static_cast<std::uint8_t>(bytes_[i]); }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(name_ + ": truncated checkpoint");
  }

  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

double LayerKind::beta(std::size_t layer) const {
  return std::log(lambda / static_cast<double>(layer + 1) + 1.0);
}

void LayerKind::validate() const {
  if (backbone == Backbone::Gcnii) {
    require(alpha > 0.0 && alpha < 1.0, "GCNII alpha must lie in (0, 1)");
    require(lambda > 0.0, "GCNII lambda must be positive");
  }
}

Matrix relu(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  const auto src = z.values();
  auto dst = out.values();
  // Writes +0 for non-positive inputs so outputs never carry -0.
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& grad, const Matrix& z) {
  require(grad.rows() == z.rows() && grad.cols() == z.cols(),
          "relu_backward: cotangent " + dims(grad) + " vs pre-activation " + dims(z));
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.values()[i] = z.values()[i] > 0.0 ? grad.values()[i] : 0.0;
  }
  return out;
}

LayerOutput gcnii_forward(const Matrix& h_in, const SparseBlock& a, const Matrix& w, double alpha,
                          double beta, const Matrix& h0_slice, std::size_t identity_offset) {
  require(a.cols == h_in.rows(), "layer_forward: adjacency has " + std::to_string(a.cols) +
                                     " columns but input has " + std::to_string(h_in.rows()) + " rows");
  require(h_in.cols() == w.rows(), "layer_forward: input " + dims(h_in) + " vs weight " + dims(w));
  require(h0_slice.rows() == a.rows && h0_slice.cols() == h_in.cols(),
          "layer_forward: initial residual " + dims(h0_slice) + " does not match output rows " +
              std::to_string(a.rows) + " and width " + std::to_string(h_in.cols()));
  require(identity_offset + w.cols() <= w.rows(),
          "layer_forward: identity offset does not fit weight " + dims(w));

  LayerTape tape;
  tape.backbone = Backbone::Gcnii;
  tape.adjacency = &a;
  tape.h_in = h_in;
  tape.alpha = alpha;
  tape.beta = beta;

  Matrix support = spmm(a, h_in);
  const double keep = 1.0 - alpha;
  for (std::size_t i = 0; i < support.size(); ++i) {
    support.values()[i] = keep * support.values()[i] + alpha * h0_slice.values()[i];
  }
  Matrix mix(w.rows(), w.cols());
  const double damp = 1.0 - beta;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t k = 0; k < w.cols(); ++k) {
      const double eye = (i == identity_offset + k) ? 1.0 : 0.0;
      mix(i, k) = damp * eye + beta * w(i, k);
    }
  }
  tape.z = matmul(support, mix);
  tape.support = std::move(support);
  tape.mix = std::move(mix);
  Matrix h_out = relu(tape.z);
  return {std::move(h_out), std::move(tape)};
}

LayerOutput layer_forward(const Matrix& h_in, const SparseBlock& a, const Matrix& w,
                          const LayerKind& kind, std::size_t layer, const Matrix& h0_slice,
                          std::size_t identity_offset) {
  if (kind.backbone == Backbone::Gcnii) {
    return gcnii_forward(h_in, a, w, kind.alpha, kind.beta(layer), h0_slice, identity_offset);
  }
  require(a.cols == h_in.rows(), "layer_forward: adjacency has " + std::to_string(a.cols) +
                                     " columns but input has " + std::to_string(h_in.rows()) + " rows");
  require(h_in.cols() == w.rows(), "layer_forward: input " + dims(h_in) + " vs weight " + dims(w));
  LayerTape tape;
  tape.backbone = Backbone::Gcn;
  tape.adjacency = &a;
  tape.h_in = h_in;
  tape.support = spmm(a, h_in);
  tape.z = matmul(tape.support, w);
  tape.mix = w;
  Matrix h_out = relu(tape.z);
  return {std::move(h_out), std::move(tape)};
}

LayerGrads layer_backward(const Matrix& grad_h_out, const LayerTape& tape) {
  const Matrix gz = relu_backward(grad_h_out, tape.z);
  LayerGrads grads;
  if (tape.backbone == Backbone::Gcn) {
    grads.w = matmul(transpose(tape.support), gz);
    const Matrix grad_support = matmul(gz, transpose(tape.mix));
    grads.h_in = spmm_transposed(*tape.adjacency, grad_support);
    return grads;
  }
  grads.w = matmul(transpose(tape.support), gz) * tape.beta;
  const Matrix grad_support = matmul(gz, transpose(tape.mix));
  grads.h_in = spmm_transposed(*tape.adjacency, grad_support) * (1.0 - tape.alpha);
  grads.h0 = grad_support * tape.alpha;
  return grads;
}

Matrix classify(const Matrix& h, const Matrix& w) {
  require(h.cols() == w.rows(), "classify: representation " + dims(h) + " vs classifier " + dims(w));
  return matmul(h, w);
}

LossAndGrad loss_and_grad(const Matrix& logits, std::span<const int> labels) {
  require(labels.size() == logits.rows(), "loss_and_grad: " + std::to_string(labels.size()) +
                                              " labels for " + std::to_string(logits.rows()) + " rows");
  require(logits.rows() > 0, "loss_and_grad: empty batch");
  const auto n = static_cast<double>(logits.rows());
  LossAndGrad out;
  out.grad_logits = Matrix(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < logits.cols(),
            "loss_and_grad: label " + std::to_string(y) + " out of range");
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - peak);
    total += std::log(sum) + peak - row[static_cast<std::size_t>(y)];
    auto grad = out.grad_logits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double p = std::exp(row[c] - peak) / sum;
      grad[c] = (p - (static_cast<int>(c) == y ? 1.0 : 0.0)) / n;
    }
  }
  out.loss = total / n;
  return out;
}

std::vector<Matrix*> ClientModel::parameters() {
  std::vector<Matrix*> out;
  if (input_projection) out.push_back(&*input_projection);
  for (auto& w : layers) out.push_back(&w);
  if (classifier) out.push_back(&*classifier);
  return out;
}

std::vector<const Matrix*> ClientModel::parameters() const {
  std::vector<const Matrix*> out;
  if (input_projection) out.push_back(&*input_projection);
  for (const auto& w : layers) out.push_back(&w);
  if (classifier) out.push_back(&*classifier);
  return out;
}

std::size_t ClientModel::num_parameters() const {
  std::size_t n = 0;
  for (const Matrix* p : parameters()) n += p->size();
  return n;
}

std::vector<double> ClientModel::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_parameters());
  for (const Matrix* p : parameters()) flat.insert(flat.end(), p->values().begin(), p->values().end());
  return flat;
}

void ClientModel::assign(std::span<const double> flat) {
  require(flat.size() == num_parameters(), "ClientModel::assign: wrong parameter count");
  std::size_t pos = 0;
  for (Matrix* p : parameters()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p->size(), p->values().begin());
    pos += p->size();
  }
}

ClientModel ClientModel::zeros_like() const {
  ClientModel z = *this;
  for (Matrix* p : z.parameters()) std::fill(p->values().begin(), p->values().end(), 0.0);
  return z;
}

bool bitwise_equal(const ClientModel& a, const ClientModel& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bitwise_equal(*pa[i], *pb[i])) return false;
  }
  return a.input_projection.has_value() == b.input_projection.has_value() &&
         a.classifier.has_value() == b.classifier.has_value();
}

ClientModel init_client_model(const ModelShape& shape, const Rng& rng) {
  shape.kind.validate();
  const std::size_t num_layers = shape.layer_out.size();
  require(num_layers > 0, "init_client_model: no layers");
  require(shape.identity_offset.empty() || shape.identity_offset.size() == num_layers,
          "init_client_model: identity offsets must match layer count");
  ClientModel model;
  model.kind = shape.kind;
  const bool gcnii = shape.kind.backbone == Backbone::Gcnii;
  if (gcnii) {
    Rng r = rng.derive(0);
    model.input_projection = glorot_init(shape.input_dim, shape.hidden_dim, r);
  }
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = (l == 0 && !gcnii) ? shape.input_dim : shape.hidden_dim;
    Rng r = rng.derive(1 + l);
    model.layers.push_back(glorot_init(in, shape.layer_out[l], r));
  }
  if (shape.with_classifier) {
    Rng r = rng.derive(0xC1A55);
    model.classifier = glorot_init(shape.hidden_dim, shape.num_classes, r);
  }
  return model;
}

void sgd_step(ClientModel& model, const ClientModel& grads, double eta) {
  auto params = model.parameters();
  const auto g = grads.parameters();
  require(params.size() == g.size(), "sgd_step: gradient structure differs from model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->rows() == g[i]->rows() && params[i]->cols() == g[i]->cols(),
            "sgd_step: gradient shape differs from parameter");
    auto w = params[i]->values();
    const auto d = g[i]->values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= eta * d[k];
  }
}

void save_checkpoint(const ClientModel& model, const std::filesystem::path& path) {
  std::string out = "GLSW";
  out.push_back(1);
  put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const Matrix* p : model.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p->rows()));
    put_u32(out, static_cast<std::uint32_t>(p->cols()));
    for (double v : p->values()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

ClientModel load_checkpoint(const std::filesystem::path& path, const LayerKind& kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || bytes.compare(0, 4, "GLSW") != 0) {
    throw DataError(path.string() + ": bad magic, expected \"GLSW\"");
  }
  const std::string body = bytes.substr(4);
  Reader r(body, path.string());
  const auto version = r.u8();
  if (version != 1) throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t num_layers = r.u32();
  ClientModel model;
  model.kind = kind;
  if (kind.backbone == Backbone::Gcnii) model.input_projection = r.matrix();
  for (std::uint32_t l = 0; l < num_layers; ++l) model.layers.push_back(r.matrix());
  if (!r.done()) model.classifier = r.matrix();
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after the last matrix");
  return model;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> params, double step) {
  require(step > 0.0, "finite_diff_grad: step must be positive");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace glasu
