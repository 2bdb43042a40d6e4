#include "plgf/plgf_model.hpp"

namespace plgf {

template class PlgfNet<float>;
template class PlgfNet<double>;
template class SimpleSrNet<float>;
template class SimpleSrNet<double>;

Eigen::Index count_parameters(const ModelConfig& config) {
    return make_model<float>(config, 0)->parameters().scalar_count();
}

}  // namespace plgf
