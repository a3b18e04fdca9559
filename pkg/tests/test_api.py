"""Tests for the API endpoints."""

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.main import app

PREFIX = "/api/radiomap"
SMALL_CITY = {"n_buildings": 3, "size_range_m": [8.0, 20.0]}


@pytest.fixture
def client():
    """Create a test client for the FastAPI app."""
    return TestClient(app)


@pytest.fixture
def raster():
    return np.random.default_rng(0).uniform(0.1, 0.9, size=(16, 16)).tolist()


class TestHealthCheck:
    """Tests for the service endpoints."""

    def test_health_check(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        data = response.json()
        assert data["status"] == "healthy"
        assert "version" in data
        assert "build" in data
        assert "torch" in data

    def test_root(self, client):
        data = client.get("/").json()
        assert data["api"] == PREFIX

    def test_version(self, client):
        data = client.get("/api/version").json()
        assert set(data) == {"version", "build"}

    def test_process_time_header(self, client):
        response = client.get("/health")
        assert float(response.headers["X-Process-Time"]) >= 0.0


class TestUpsampleEndpoint:
    """Tests for POST /upsample."""

    def test_bilinear(self, client):
        """A 4x4 raster at factor 2 comes back 8x8 and within the input range."""
        lr = np.linspace(0.0, 1.0, 16).reshape(4, 4)
        response = client.post(
            f"{PREFIX}/upsample",
            json={"raster": lr.tolist(), "factor": 2, "method": "bilinear"}
        )
        assert response.status_code == 200
        data = response.json()
        assert data["method"] == "bilinear"
        assert data["resolution"] == 8
        out = np.asarray(data["raster"])
        assert out.shape == (8, 8)
        assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize("method", ["nearest", "kriging", "rbf"])
    def test_interpolators_hit_samples(self, client, method):
        lr = np.random.default_rng(1).uniform(size=(4, 4))
        response = client.post(
            f"{PREFIX}/upsample",
            json={"raster": lr.tolist(), "factor": 2, "method": method, "area_side_m": 32.0}
        )
        assert response.status_code == 200
        out = np.asarray(response.json()["raster"])
        np.testing.assert_allclose(out[::2, ::2], lr, atol=1e-8)

    def test_non_square_raster(self, client):
        response = client.post(f"{PREFIX}/upsample", json={"raster": [[0.1, 0.2], [0.3]]})
        assert response.status_code == 422

    def test_unknown_method(self, client):
        response = client.post(f"{PREFIX}/upsample", json={"raster": [[0.1]], "method": "bicubic"})
        assert response.status_code == 422

    def test_output_too_large(self, client):
        response = client.post(
            f"{PREFIX}/upsample",
            json={"raster": np.zeros((20, 20)).tolist(), "factor": 16}
        )
        assert response.status_code == 400
        assert "exceeds" in response.json()["detail"]

    def test_values_out_of_range(self, client):
        response = client.post(f"{PREFIX}/upsample", json={"raster": [[0.1, 2.0], [0.3, 0.4]], "factor": 2})
        assert response.status_code == 400


class TestMetricsEndpoint:
    """Tests for POST /metrics."""

    def test_identical_rasters(self, client, raster):
        """Scoring a raster against itself hits the PSNR cap, SSIM 1 and NMSE 0."""
        response = client.post(f"{PREFIX}/metrics", json={"prediction": raster, "reference": raster})
        assert response.status_code == 200
        data = response.json()
        assert data["psnr_db"] == pytest.approx(100.0)
        assert data["ssim"] == pytest.approx(1.0)
        assert data["nmse"] == pytest.approx(0.0)

    def test_small_rasters_need_small_window(self, client):
        small = np.full((5, 5), 0.5).tolist()
        response = client.post(f"{PREFIX}/metrics", json={"prediction": small, "reference": small})
        assert response.status_code == 400
        response = client.post(
            f"{PREFIX}/metrics",
            json={"prediction": small, "reference": small, "ssim": {"window_size": 3, "sigma": 0.5}}
        )
        assert response.status_code == 200

    def test_zero_reference(self, client):
        """NMSE is undefined for an all-zero reference."""
        response = client.post(
            f"{PREFIX}/metrics",
            json={"prediction": np.ones((16, 16)).tolist(), "reference": np.zeros((16, 16)).tolist()}
        )
        assert response.status_code == 400
        assert response.json()["error"] == "UndefinedReferenceError"


class TestSynthesizeEndpoint:
    """Tests for POST /synthesize."""

    def test_pair(self, client):
        response = client.post(
            f"{PREFIX}/synthesize",
            json={"seed": 3, "hr_resolution": 16, "factor": 4, "area_side_m": 64.0, "city": SMALL_CITY}
        )
        assert response.status_code == 200
        data = response.json()
        hr = np.asarray(data["hr"])
        lr = np.asarray(data["lr"])
        assert data["seed"] == 3
        assert hr.shape == (16, 16)
        assert lr.shape == (4, 4)
        assert len(data["bs_cell"]) == 2
        np.testing.assert_array_equal(lr, hr[::4, ::4])

    def test_deterministic(self, client):
        body = {"seed": 5, "hr_resolution": 16, "factor": 4, "area_side_m": 64.0, "city": SMALL_CITY}
        first = client.post(f"{PREFIX}/synthesize", json=body).json()
        second = client.post(f"{PREFIX}/synthesize", json=body).json()
        assert first == second

    def test_factor_must_divide(self, client):
        response = client.post(
            f"{PREFIX}/synthesize",
            json={"hr_resolution": 16, "factor": 3, "area_side_m": 64.0, "city": SMALL_CITY}
        )
        assert response.status_code == 400


class TestConfigEndpoints:
    """Tests for the configuration endpoints."""

    def test_default_config(self, client):
        data = client.get(f"{PREFIX}/config").json()
        assert data["preset"] == "desk"
        assert len(data["config_hash"]) == 64
        assert data["config"]["grid"]["factor"] == 4

    def test_list_presets(self, client):
        assert client.get(f"{PREFIX}/config/presets").json()["presets"] == ["desk", "full", "smoke"]

    def test_named_preset(self, client):
        smoke = client.get(f"{PREFIX}/config/presets/smoke").json()
        desk = client.get(f"{PREFIX}/config/presets/desk").json()
        assert smoke["preset"] == "smoke"
        assert smoke["config_hash"] != desk["config_hash"]

    def test_unknown_preset(self, client):
        assert client.get(f"{PREFIX}/config/presets/huge").status_code == 404


class TestAsyncClient:
    @pytest.mark.asyncio
    async def test_health_over_asgi(self):
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, base_url="http://test") as ac:
            response = await ac.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "healthy"
