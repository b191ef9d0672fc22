#pragma once

#include "emtune/gateway.hpp"

namespace emtune::detail {

std::shared_ptr<Backend> make_http_backend(const HttpEndpoint& endpoint, const RequestParams& params);

}  // namespace emtune::detail
