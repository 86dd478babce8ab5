// SPDX-License-Identifier: Apache-2.0
#include "fineformer/errors.hpp"
