// Protocol test server: answers predictor queries over stdio or a unix
// socket. The echo model returns zero noise and zero hook features.

#include <syncnoise/predictor.hpp>
#include <syncnoise/wire.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <memory>

using namespace syncnoise;

int main(int argc, char** argv)
{
  CLI::App app{"predictor protocol test server"};
  std::string socket_path;
  std::string model = "echo";
  int downscale = 1;
  double hue = 200.0;
  double texture = 0.08;
  app.add_option("--unix", socket_path, "listen on a unix socket instead of stdio");
  app.add_option("--model", model, "echo | synthetic")->capture_default_str();
  app.add_option("--downscale", downscale, "latent downscale")->capture_default_str();
  app.add_option("--hue", hue, "synthetic model hue (degrees)")->capture_default_str();
  app.add_option("--texture", texture, "synthetic model texture sigma")
    ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try
  {
    std::unique_ptr<Predictor> predictor;
    if (model == "echo")
      predictor = std::make_unique<ZeroPredictor>(ResidualCodec(downscale), 3);
    else if (model == "synthetic")
      predictor = std::make_unique<SyntheticEditPredictor>(ResidualCodec(downscale),
                                                           hue, texture);
    else
      throw ArgumentError("unknown model '" + model + "'");

    if (!socket_path.empty())
    {
      wire::serve_unix(socket_path, *predictor);
      return 0;
    }
    wire::FdStream stream(0, 1, false);
    wire::serve(stream, *predictor);
  }
  catch (const std::exception& e)
  {
    std::cerr << "echo_predictor: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
