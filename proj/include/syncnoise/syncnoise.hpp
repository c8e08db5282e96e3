#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/config.hpp>
#include <syncnoise/correspondence.hpp>
#include <syncnoise/depth_supervision.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/hashing.hpp>
#include <syncnoise/image_io.hpp>
#include <syncnoise/noise_sync.hpp>
#include <syncnoise/parallel.hpp>
#include <syncnoise/pipeline.hpp>
#include <syncnoise/predictor.hpp>
#include <syncnoise/propagation.hpp>
#include <syncnoise/scene.hpp>
#include <syncnoise/scene_baker.hpp>
#include <syncnoise/schedule.hpp>
#include <syncnoise/synthetic_scene.hpp>
#include <syncnoise/wire.hpp>
