// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0

#include "geoattn/cli.hpp"

int main(int argc, char** argv) { return geoattn::cli_main(argc, argv); }
