#include "triage/nn/network.hpp"

#include "triage/error.hpp"
#include "triage/threshold.hpp"

#include <algorithm>
#include <cmath>

namespace triage::nn {

const char* to_string(NetKind kind)
{
    switch (kind) {
    case NetKind::Unet2d: return "UNET2D";
    case NetKind::Unet3d: return "UNET3D";
    case NetKind::LungUnet2d: return "LUNG_UNET2D";
    case NetKind::ResnetCls: return "RESNET_CLS";
    case NetKind::Multitask: return "MULTITASK";
    }
    return "MULTITASK";
}

NetKind net_kind_from_string(const std::string& s)
{
    for (NetKind k : {NetKind::Unet2d, NetKind::Unet3d, NetKind::LungUnet2d, NetKind::ResnetCls, NetKind::Multitask})
        if (s == to_string(k))
            return k;
    throw Error(ErrorCode::InvalidSpec, "unknown network kind '" + s + "'");
}

void NetworkSpec::validate() const
{
    auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
    if (levels < 1 || levels > 12)
        fail("levels must lie in 1..12");
    if (base_channels < 1 || max_channels < base_channels)
        fail("invalid channel schedule");
    if (kind == NetKind::Multitask && attach == Attach::Spatial && (attach_level < 1 || attach_level > levels))
        fail("spatial attachment level " + std::to_string(attach_level) + " outside 1.." + std::to_string(levels));
    if (has_classification()) {
        if (pyramid_levels.empty())
            fail("pyramid_levels must not be empty");
        for (int k : pyramid_levels)
            if (k < 1)
                fail("pyramid levels must be positive");
        if (fc_hidden < 1)
            fail("fc_hidden must be positive");
    }
    if (norm_groups < 1)
        fail("norm_groups must be positive");
    for (int p : patch_size)
        if (p < 1)
            fail("patch_size must be positive");
}

int NetworkSpec::channels(int level) const
{
    long c = long(base_channels) << level;
    return int(std::min<long>(c, max_channels));
}

NetworkSpec default_spec(NetKind kind)
{
    NetworkSpec s;
    s.kind = kind;
    if (kind == NetKind::LungUnet2d)
        s.block = BlockType::Plain;
    if (kind == NetKind::Unet3d)
        s.levels = 5;
    if (kind == NetKind::ResnetCls)
        s.levels = 5;
    return s;
}

float sigmoid(float z) { return float(sigmoid(double(z))); }

double sigmoid(double z)
{
    if (z >= 0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

template <typename T>
struct Network<T>::Impl {
    Kernel3 kernel;
    Kernel3 pool;
    std::vector<Block<T>> enc, dec;
    std::vector<MaxPool<T>> pools;
    Upsample<T> up;
    Conv<T> seg_head;
    PyramidPool<T> pyramid;
    Linear<T> fc1, fc2;
    Relu<T> fc_relu;

    // Last training forward.
    bool cached = false;
    Shape3 in_shape, padded;
    std::vector<std::array<int, 5>> enc_dims, dec_dims;
};

namespace {

// Head input: encoder level (levels-1) or decoder level (l-1), where decoder
// level levels-1 is the bottleneck itself.
struct HeadSource {
    bool decoder = false;
    int level = 0;
};

HeadSource head_source(const NetworkSpec& s)
{
    if (s.kind == NetKind::ResnetCls || s.attach == Attach::Latent || s.attach_level == s.levels)
        return {false, s.levels - 1};
    return {true, s.attach_level - 1};
}

int round_up(int n, int m) { return (n + m - 1) / m * m; }

} // namespace

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), impl_(std::make_unique<Impl>())
{
    spec_.validate();
    Impl& m = *impl_;
    const bool is3d = spec_.is_3d();
    m.kernel = is3d ? Kernel3{3, 3, 3} : Kernel3{1, 3, 3};
    m.pool = is3d ? Kernel3{2, 2, 2} : Kernel3{1, 2, 2};
    const int L = spec_.levels;
    for (int i = 0; i < L; ++i) {
        const int in = i == 0 ? 1 : spec_.channels(i - 1);
        m.enc.emplace_back("enc" + std::to_string(i), spec_.block, in, spec_.channels(i), m.kernel, spec_.norm_groups);
    }
    m.pools.assign(std::size_t(std::max(L - 1, 0)), MaxPool<T>(m.pool));
    m.up = Upsample<T>(m.pool);
    if (spec_.has_segmentation()) {
        for (int i = 0; i + 1 < L; ++i)
            m.dec.emplace_back("dec" + std::to_string(i), spec_.block, spec_.channels(i + 1) + spec_.channels(i),
                               spec_.channels(i), m.kernel, spec_.norm_groups);
        m.seg_head = Conv<T>("seg_head", spec_.channels(0), 1, Kernel3{1, 1, 1});
    }
    if (spec_.has_classification()) {
        const HeadSource src = head_source(spec_);
        m.pyramid = PyramidPool<T>(spec_.pyramid_levels);
        const int features = m.pyramid.output_length(spec_.channels(src.level));
        m.fc1 = Linear<T>("cls.fc1", features, spec_.fc_hidden);
        m.fc2 = Linear<T>("cls.fc2", spec_.fc_hidden, 1);
    }

    Rng rng(seed);
    for (auto& b : m.enc) b.init(rng);
    for (auto& b : m.dec) b.init(rng);
    if (spec_.has_segmentation()) m.seg_head.init(rng);
    if (spec_.has_classification()) {
        m.fc1.init(rng);
        m.fc2.init(rng);
    }
}

template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;
template <typename T>
Network<T>::~Network() = default;

template <typename T>
NetOutput<T> Network<T>::forward(const Shape3& shape, std::span<const T> image, const std::vector<bool>* slice_valid,
                                 bool train)
{
    if (image.size() != shape.size() || shape.size() == 0)
        throw Error(ErrorCode::ShapeMismatch, "image size does not match its shape");
    Impl& m = *impl_;
    const int L = spec_.levels;
    const int div = spec_.divisor();
    const bool is3d = spec_.is_3d();
    const Shape3 padded{is3d ? round_up(shape.z, div) : shape.z, round_up(shape.y, div), round_up(shape.x, div)};

    Tensor<T> x = is3d ? Tensor<T>(1, 1, padded.z, padded.y, padded.x) : Tensor<T>(padded.z, 1, 1, padded.y, padded.x);
    for (int z = 0; z < padded.z; ++z)
        for (int y = 0; y < padded.y; ++y)
            for (int c = 0; c < padded.x; ++c) {
                const T v = image[shape.index(reflect_index(z, shape.z), reflect_index(y, shape.y),
                                              reflect_index(c, shape.x))];
                if (is3d)
                    x.at(0, 0, z, y, c) = v;
                else
                    x.at(z, 0, 0, y, c) = v;
            }

    const HeadSource src = head_source(spec_);
    NetOutput<T> out;
    out.shape = shape;
    std::vector<Tensor<T>> e(L);
    std::vector<std::array<int, 5>> enc_dims(L), dec_dims(L);
    for (int i = 0; i < L; ++i) {
        e[i] = m.enc[i].forward(i == 0 ? x : m.pools[i - 1].forward(e[i - 1], train), train);
        enc_dims[i] = e[i].dims;
    }
    x = Tensor<T>();

    Tensor<T> head_input;
    if (spec_.has_classification() && !src.decoder)
        head_input = e[L - 1];

    if (spec_.has_segmentation()) {
        Tensor<T> d = e[L - 1];
        dec_dims[L - 1] = d.dims;
        for (int i = L - 2; i >= 0; --i) {
            d = m.dec[i].forward(concat_channels(m.up.forward(d), e[i]), train);
            e[i] = Tensor<T>();
            dec_dims[i] = d.dims;
            if (spec_.has_classification() && src.decoder && src.level == i)
                head_input = d;
        }
        const Tensor<T> logits = m.seg_head.forward(d, train);
        out.seg_logits.resize(shape.size());
        for (int z = 0; z < shape.z; ++z)
            for (int y = 0; y < shape.y; ++y)
                for (int c = 0; c < shape.x; ++c)
                    out.seg_logits[shape.index(z, y, c)] = is3d ? logits.at(0, 0, z, y, c) : logits.at(z, 0, 0, y, c);
    }

    if (spec_.has_classification()) {
        out.shared_dims = head_input.dims;
        const Tensor<T> pooled = m.pyramid.forward(head_input, slice_valid, train);
        const Tensor<T> hidden = m.fc_relu.forward(m.fc1.forward(pooled, train), train);
        out.cls_logit = m.fc2.forward(hidden, train).data[0];
    }

    // Inference leaves the training cache alone, so concurrent eval forwards
    // on one network do not write shared state.
    if (train) {
        m.cached = true;
        m.in_shape = shape;
        m.padded = padded;
        m.enc_dims = enc_dims;
        m.dec_dims = dec_dims;
    }
    return out;
}

template <typename T>
void Network<T>::backward(std::span<const T> grad_seg, T grad_cls)
{
    Impl& m = *impl_;
    if (!m.cached)
        throw Error(ErrorCode::InvalidArgument, "backward() without a preceding training forward()");
    m.cached = false;
    const int L = spec_.levels;
    const bool is3d = spec_.is_3d();
    const Shape3 s = m.in_shape, p = m.padded;
    std::vector<Tensor<T>> g_enc(L), g_dec(L);

    if (spec_.has_segmentation() && !grad_seg.empty()) {
        if (grad_seg.size() != s.size())
            throw Error(ErrorCode::ShapeMismatch, "segmentation gradient has the wrong size");
        Tensor<T> g = is3d ? Tensor<T>(1, 1, p.z, p.y, p.x) : Tensor<T>(p.z, 1, 1, p.y, p.x);
        for (int z = 0; z < s.z; ++z)
            for (int y = 0; y < s.y; ++y)
                for (int c = 0; c < s.x; ++c)
                    (is3d ? g.at(0, 0, z, y, c) : g.at(z, 0, 0, y, c)) = grad_seg[s.index(z, y, c)];
        g_dec[0] = m.seg_head.backward(g, true);
    }

    if (spec_.has_classification()) {
        Tensor<T> g(1, 1, 1, 1, 1, grad_cls);
        g = m.fc1.backward(m.fc_relu.backward(m.fc2.backward(g, true)), true);
        Tensor<T> g_feat = m.pyramid.backward(g);
        const HeadSource src = head_source(spec_);
        add_into(src.decoder ? g_dec[src.level] : g_enc[src.level], g_feat);
    }

    if (spec_.has_segmentation()) {
        for (int i = 0; i + 1 < L; ++i) {
            if (g_dec[i].data.empty())
                continue;
            Tensor<T> g_cat = m.dec[i].backward(g_dec[i], true);
            Tensor<T> g_up, g_skip;
            split_channels(g_cat, spec_.channels(i + 1), g_up, g_skip);
            add_into(g_enc[i], g_skip);
            add_into(g_dec[i + 1], m.up.backward(g_up));
        }
        if (!g_dec[L - 1].data.empty())
            add_into(g_enc[L - 1], g_dec[L - 1]);
    }

    for (int i = L - 1; i >= 0; --i) {
        if (g_enc[i].data.empty())
            continue;
        Tensor<T> g_in = m.enc[i].backward(g_enc[i], i > 0);
        if (i > 0)
            add_into(g_enc[i - 1], m.pools[i - 1].backward(g_in));
    }
}

template <typename T>
std::vector<Param<T>*> Network<T>::parameters()
{
    Impl& m = *impl_;
    std::vector<Param<T>*> out;
    for (auto& b : m.enc) b.collect(out);
    for (auto& b : m.dec) b.collect(out);
    if (spec_.has_segmentation()) m.seg_head.collect(out);
    if (spec_.has_classification()) {
        m.fc1.collect(out);
        m.fc2.collect(out);
    }
    return out;
}

template <typename T>
std::vector<Param<T>*> Network<T>::classifier_parameters()
{
    std::vector<Param<T>*> out;
    if (spec_.has_classification()) {
        impl_->fc1.collect(out);
        impl_->fc2.collect(out);
    }
    return out;
}

template <typename T>
void Network<T>::zero_grad()
{
    for (Param<T>* p : parameters())
        std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
std::size_t Network<T>::parameter_count()
{
    std::size_t n = 0;
    for (Param<T>* p : parameters())
        n += p->size();
    return n;
}

template <typename Dst, typename Src>
void copy_parameters(Network<Src>& from, Network<Dst>& to)
{
    auto a = from.parameters();
    auto b = to.parameters();
    if (a.size() != b.size())
        throw Error(ErrorCode::KeyMismatch, "parameter lists differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->name != b[i]->name || a[i]->shape != b[i]->shape)
            throw Error(ErrorCode::KeyMismatch, "parameter '" + a[i]->name + "' does not match '" + b[i]->name + "'");
        std::transform(a[i]->value.begin(), a[i]->value.end(), b[i]->value.begin(),
                       [](Src v) { return Dst(v); });
    }
}

template class Network<float>;
template class Network<double>;
template void copy_parameters<float, float>(Network<float>&, Network<float>&);
template void copy_parameters<double, float>(Network<float>&, Network<double>&);
template void copy_parameters<float, double>(Network<double>&, Network<float>&);
template void copy_parameters<double, double>(Network<double>&, Network<double>&);

// ---------------------------------------------------------------- inference helpers

namespace {

std::vector<float> probabilities(const std::vector<float>& logits)
{
    std::vector<float> p(logits.size());
    std::transform(logits.begin(), logits.end(), p.begin(), [](float z) { return sigmoid(z); });
    return p;
}

} // namespace

std::vector<float> forward_unet2d(Network<float>& model, const Volume& v)
{
    const NetKind k = model.spec().kind;
    if (k != NetKind::Unet2d && k != NetKind::LungUnet2d && k != NetKind::Multitask)
        throw Error(ErrorCode::InvalidSpec, "forward_unet2d needs a slice-wise segmentation network");
    return probabilities(model.forward(v.shape(), v.data()).seg_logits);
}

std::vector<float> forward_unet3d(Network<float>& model, const Volume& v)
{
    if (model.spec().kind != NetKind::Unet3d)
        throw Error(ErrorCode::InvalidSpec, "forward_unet3d needs a UNET3D network");
    const Shape3 s = v.shape();
    const auto& ps = model.spec().patch_size;
    const Shape3 patch{std::min(ps[0], s.z), std::min(ps[1], s.y), std::min(ps[2], s.x)};
    std::vector<float> out(s.size());
    std::vector<float> tile(patch.size());
    for (int z0 = 0; z0 < s.z; z0 += patch.z)
        for (int y0 = 0; y0 < s.y; y0 += patch.y)
            for (int x0 = 0; x0 < s.x; x0 += patch.x) {
                const Shape3 region{std::min(patch.z, s.z - z0), std::min(patch.y, s.y - y0),
                                    std::min(patch.x, s.x - x0)};
                for (int z = 0; z < patch.z; ++z)
                    for (int y = 0; y < patch.y; ++y)
                        for (int c = 0; c < patch.x; ++c)
                            tile[patch.index(z, y, c)] =
                                v.at(z0 + reflect_index(z, region.z), y0 + reflect_index(y, region.y),
                                     x0 + reflect_index(c, region.x));
                const auto logits = model.forward(patch, tile).seg_logits;
                for (int z = 0; z < region.z; ++z)
                    for (int y = 0; y < region.y; ++y)
                        for (int c = 0; c < region.x; ++c)
                            out[s.index(z0 + z, y0 + y, x0 + c)] = sigmoid(logits[patch.index(z, y, c)]);
            }
    return out;
}

MultitaskPrediction forward_multitask(Network<float>& model, const Volume& v, const std::vector<bool>* slice_valid)
{
    if (model.spec().kind != NetKind::Multitask)
        throw Error(ErrorCode::InvalidSpec, "forward_multitask needs a MULTITASK network");
    const NetOutput<float> out = model.forward(v.shape(), v.data(), slice_valid);
    return {probabilities(out.seg_logits), sigmoid(*out.cls_logit)};
}

} // namespace triage::nn
