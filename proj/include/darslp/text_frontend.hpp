#pragma once

#include <vector>

#include "darslp/corpus.hpp"

namespace darslp {

// Padded batch of precomputed token embeddings. Rows beyond a sample's
// length are zero and masked false; this module never tokenizes raw text.
struct TextBatch {
    std::vector<Mat> embeddings;            // B matrices, each L_max x 768
    std::vector<std::vector<bool>> pad_mask;  // true = real token
    std::vector<int> lengths;

    int size() const { return static_cast<int>(embeddings.size()); }
    int l_max() const { return embeddings.empty() ? 0 : static_cast<int>(embeddings[0].rows()); }
};

TextBatch pad_batch(const std::vector<const CorpusSample*>& samples);
TextBatch pad_batch(const std::vector<CorpusSample>& samples);

// Row b = mean of states at true positions only. states: B matrices of
// L_max x D. Output B x D.
Mat masked_mean_pool(const std::vector<Mat>& states, const std::vector<std::vector<bool>>& pad_mask);

}  // namespace darslp
