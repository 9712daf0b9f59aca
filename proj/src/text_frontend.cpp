#include "darslp/text_frontend.hpp"

namespace darslp {

TextBatch pad_batch(const std::vector<const CorpusSample*>& samples) {
    if (samples.empty()) throw EmptyBatch("pad_batch: no samples");
    Eigen::Index l_max = 0;
    for (const CorpusSample* s : samples) {
        if (s->embedding.rows() < 1) throw EmptyBatch("pad_batch: sample with no tokens");
        l_max = std::max(l_max, s->embedding.rows());
    }
    TextBatch b;
    for (const CorpusSample* s : samples) {
        Mat padded = Mat::Zero(l_max, s->embedding.cols());
        padded.topRows(s->embedding.rows()) = s->embedding;
        std::vector<bool> mask(static_cast<std::size_t>(l_max), false);
        for (Eigen::Index i = 0; i < s->embedding.rows(); ++i) mask[static_cast<std::size_t>(i)] = true;
        b.embeddings.push_back(std::move(padded));
        b.pad_mask.push_back(std::move(mask));
        b.lengths.push_back(static_cast<int>(s->embedding.rows()));
    }
    return b;
}

TextBatch pad_batch(const std::vector<CorpusSample>& samples) {
    std::vector<const CorpusSample*> ptrs;
    ptrs.reserve(samples.size());
    for (const CorpusSample& s : samples) ptrs.push_back(&s);
    return pad_batch(ptrs);
}

Mat masked_mean_pool(const std::vector<Mat>& states,
                     const std::vector<std::vector<bool>>& pad_mask) {
    if (states.empty()) throw EmptyBatch("masked_mean_pool: no rows");
    if (states.size() != pad_mask.size()) throw ShapeMismatch("masked_mean_pool: mask count");
    Mat out(static_cast<Eigen::Index>(states.size()), states[0].cols());
    for (std::size_t b = 0; b < states.size(); ++b) {
        const Mat& s = states[b];
        const std::vector<bool>& m = pad_mask[b];
        if (static_cast<Eigen::Index>(m.size()) != s.rows())
            throw ShapeMismatch("masked_mean_pool: mask length");
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(s.cols());
        long n = 0;
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            if (!m[static_cast<std::size_t>(i)]) continue;
            acc += s.row(i);
            ++n;
        }
        if (n == 0) throw AllMaskedRow("masked_mean_pool: a row has no real tokens");
        out.row(static_cast<Eigen::Index>(b)) = acc / static_cast<double>(n);
    }
    return out;
}

}  // namespace darslp
