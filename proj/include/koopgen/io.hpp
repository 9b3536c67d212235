#pragma once

#include <string>

#include "koopgen/model.hpp"

namespace koopgen {

// Schema violations come through as std::invalid_argument with the JSON
// field path in the message.

std::string dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const std::string& text);

std::string model_to_json(const ModelParams& params);
ModelParams model_from_json(const std::string& text);

// File helpers; a ".gz" extension selects gzip compression transparently.
void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

// CSV with 17 significant digits; one header line.
std::string matrix_to_csv(const std::string& header, const Eigen::MatrixXd& rows);

}  // namespace koopgen
