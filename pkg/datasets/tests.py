# -*- coding: utf-8 -*-

import math
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .config import GSD_CHOICES, DataConfig
from .exceptions import DataError, EmptyManifestError, ManifestFormatError, MissingFileError, UnsupportedGSDError, WindowError
from .folds import stratified_kfold
from .manifest import Manifest, ManifestRecord, manifest_digest, read_manifest, write_manifest
from .scenes import Building, VectorScene, generate_scene, raster_size, render
from .storage import get_image_path, get_mask_path, load_tile, save_tile
from .synthesis import subsample_by_weight, synthesize, tiles_per_scene
from .tiling import SampleTile, stack_batch, tile


def _square(x, y, side):
    return Building(kind='rect', polygon=((x, y), (x + side, y), (x + side, y + side), (x, y + side)),
                    color=(200, 60, 60))


def _records(counts):
    records = []
    for gsd, n in counts.items():
        records += [ManifestRecord(tile_id=f's_{gsd}cm_{i}_0', image=f'{i}.png', mask=f'{i}_mask.png', gsd=gsd, row=i)
                    for i in range(n)]
    return Manifest(records, seed=0, generator_version='test')


class SceneTests(SimpleTestCase):
    def test_ten_metre_building_at_ten_cm(self):
        scene = VectorScene(seed=0, name='one', buildings=(_square(5.0, 5.0, 10.0),))
        sample = render(scene, 10, 256)
        rows = np.flatnonzero(sample.mask.any(axis=1))
        cols = np.flatnonzero(sample.mask.any(axis=0))
        self.assertLessEqual(abs(len(rows) - 100), 1)
        self.assertLessEqual(abs(len(cols) - 100), 1)
        self.assertLessEqual(abs(int(sample.mask.sum()) - 10000), 201)

    def test_area_scales_with_resolution(self):
        scene = generate_scene(1)
        fine = int(render(scene, 2, 256).mask.sum())
        coarse = int(render(scene, 20, 256).mask.sum())
        self.assertAlmostEqual(fine / coarse / 100.0, 1.0, delta=0.05)

    def test_centroid_scales_linearly(self):
        building = Building(kind='rotated', polygon=((10.0, 8.0), (18.0, 12.0), (15.0, 18.0), (7.0, 14.0)),
                            color=(220, 220, 200))
        scene = VectorScene(seed=0, name='c', buildings=(building,))
        cx, cy = building.centroid
        for gsd in (4, 8):
            ys, xs = np.nonzero(render(scene, gsd, 256).mask)
            scale = 100.0 / gsd
            self.assertLessEqual(abs(xs.mean() + 0.5 - cx * scale), 1.0)
            self.assertLessEqual(abs(ys.mean() + 0.5 - cy * scale), 1.0)

    def test_seeded_generation_is_byte_identical(self):
        self.assertEqual(generate_scene(5), generate_scene(5))
        a, b = render(generate_scene(5), 8, 256), render(generate_scene(5), 8, 256)
        self.assertEqual(a.image.tobytes(), b.image.tobytes())
        self.assertEqual(a.mask.tobytes(), b.mask.tobytes())

    def test_mask_is_binary_and_image_is_rgb(self):
        sample = render(generate_scene(2), 10, 256)
        self.assertLessEqual(set(np.unique(sample.mask).tolist()), {0, 1})
        self.assertEqual(sample.image.shape, (512, 512, 3))
        self.assertEqual(sample.image.dtype, np.uint8)

    def test_generated_buildings_respect_extent_and_min_side(self):
        for seed in range(5):
            scene = generate_scene(seed)
            self.assertGreater(len(scene.buildings), 0)
            for building in scene.buildings:
                points = np.array(building.polygon)
                sides = np.linalg.norm(points - np.roll(points, -1, axis=0), axis=1)
                self.assertGreaterEqual(sides.min(), 1.0 - 1e-9)
                self.assertGreaterEqual(points.min(), 0.0)
                self.assertLessEqual(points.max(), scene.extent)

    def test_sub_pixel_building_is_dropped(self):
        scene = VectorScene(seed=0, name='tiny', buildings=(_square(3.0, 3.0, 0.05), _square(10.0, 10.0, 5.0)))
        with self.assertLogs('datasets.scenes', level='INFO') as logs:
            sample = render(scene, 20, 256)
        self.assertTrue(any('丢弃' in line for line in logs.output))
        self.assertEqual(int(sample.mask[10:20, 10:20].sum()), 0)
        self.assertGreater(int(sample.mask.sum()), 0)

    def test_rejects_unsupported_gsd_and_tile(self):
        scene = generate_scene(0)
        with self.assertRaises(UnsupportedGSDError):
            render(scene, 9, 256)
        with self.assertRaises(DataError):
            render(scene, 10, 100)

    def test_building_outside_extent(self):
        with self.assertRaises(DataError):
            VectorScene(seed=0, name='bad', buildings=(_square(40.0, 40.0, 5.0),))

    def test_raster_size(self):
        self.assertEqual(raster_size(40.96, 2, 256), 2048)
        self.assertEqual(raster_size(40.96, 3, 256), 1536)
        self.assertEqual(raster_size(40.96, 20, 256), 256)
        self.assertEqual(raster_size(40.96, 2, 1024), 2048)


class TilingTests(SimpleTestCase):
    def _raster(self, h, w):
        image = np.arange(h * w * 3, dtype=np.uint32).reshape(h, w, 3).astype(np.uint8)
        mask = (np.arange(h * w).reshape(h, w) % 3 == 0).astype(np.uint8)
        return image, mask

    def test_sixteen_tiles(self):
        image = np.zeros((4096, 4096, 3), dtype=np.uint8)
        mask = np.zeros((4096, 4096), dtype=np.uint8)
        self.assertEqual(len(tile(image, mask, 1024, 1024)), 16)

    def test_single_tile(self):
        image = np.zeros((1024, 1024, 3), dtype=np.uint8)
        self.assertEqual(len(tile(image, np.zeros((1024, 1024), dtype=np.uint8), 1024)), 1)

    def test_reassembly(self):
        image, mask = self._raster(96, 64)
        tiles = tile(image, mask, 32, gsd=5, scene='s')
        self.assertEqual([(t.row, t.col) for t in tiles], [(r, c) for r in range(3) for c in range(2)])
        rebuilt_image = np.zeros_like(image)
        rebuilt_mask = np.zeros_like(mask)
        for t in tiles:
            rebuilt_image[t.row * 32:(t.row + 1) * 32, t.col * 32:(t.col + 1) * 32] = t.image
            rebuilt_mask[t.row * 32:(t.row + 1) * 32, t.col * 32:(t.col + 1) * 32] = t.mask
        np.testing.assert_array_equal(rebuilt_image, image)
        np.testing.assert_array_equal(rebuilt_mask, mask)
        self.assertEqual(tiles[3].tile_id, 's_5cm_1_1')

    def test_partial_windows_discarded(self):
        image, mask = self._raster(100, 70)
        tiles = tile(image, mask, 32)
        self.assertEqual(len(tiles), 3 * 2)
        np.testing.assert_array_equal(tiles[-1].mask, mask[64:96, 32:64])

    def test_overlapping_stride(self):
        image, mask = self._raster(64, 64)
        self.assertEqual(len(tile(image, mask, 32, 16)), 9)

    def test_window_too_large(self):
        image, mask = self._raster(64, 64)
        with self.assertRaises(WindowError):
            tile(image, mask, 128)

    def test_mismatched_sample(self):
        with self.assertRaises(DataError):
            SampleTile(image=np.zeros((4, 4, 3), dtype=np.uint8), mask=np.zeros((4, 5), dtype=np.uint8), gsd=2)

    def test_stack_batch(self):
        image = np.full((32, 32, 3), 255, dtype=np.uint8)
        image[0, 0] = 0
        mask = np.ones((32, 32), dtype=np.uint8)
        x, y = stack_batch([SampleTile(image=image, mask=mask, gsd=2)] * 2)
        self.assertEqual(x.shape, (2, 3, 32, 32))
        self.assertEqual(y.shape, (2, 1, 32, 32))
        self.assertAlmostEqual(float(x[0, 0, 1, 1]), 0.5)
        self.assertAlmostEqual(float(x[0, 2, 0, 0]), -0.5)
        self.assertEqual(x.dtype, np.float32)


class FoldTests(SimpleTestCase):
    def test_single_class_hundred_tiles(self):
        folded = stratified_kfold(_records({2: 100}), k=10, seed=0)
        self.assertEqual(Counter(r.fold for r in folded.records), {f: 10 for f in range(10)})

    def test_source_distribution_is_balanced(self):
        counts = {2: 5632, 10: 100, 20: 68}
        folded = stratified_kfold(_records(counts), k=10, seed=3)
        for gsd, n in counts.items():
            per_fold = Counter(r.fold for r in folded.records if r.gsd == gsd)
            self.assertEqual(sum(per_fold.values()), n)
            self.assertLessEqual(max(per_fold.values()) - min(per_fold.values()), 1)
        per_fold = Counter(r.fold for r in folded.records if r.gsd == 2)
        self.assertEqual(set(per_fold.values()), {563, 564})

    def test_folds_partition_the_manifest(self):
        manifest = _records({2: 23, 5: 17})
        folded = stratified_kfold(manifest, k=5, seed=1)
        ids = [r.tile_id for f in range(5) for r in folded.select([f])]
        self.assertEqual(sorted(ids), sorted(r.tile_id for r in manifest.records))

    def test_same_seed_same_assignment(self):
        a = stratified_kfold(_records({2: 30, 3: 25}), k=10, seed=7)
        b = stratified_kfold(_records({2: 30, 3: 25}), k=10, seed=7)
        self.assertEqual([r.fold for r in a.records], [r.fold for r in b.records])

    def test_small_class_is_logged(self):
        with self.assertLogs('datasets.folds', level='WARNING'):
            folded = stratified_kfold(_records({2: 40, 20: 3}), k=10, seed=0)
        self.assertEqual(len({r.fold for r in folded.records if r.gsd == 20}), 3)

    def test_fewer_tiles_than_folds(self):
        with self.assertLogs('datasets.folds', level='WARNING'):
            folded = stratified_kfold(_records({2: 3, 3: 2}), k=10, seed=0)
        self.assertEqual(sorted(r.fold for r in folded.records), [0, 1, 2, 3, 4])

    def test_empty_manifest(self):
        with self.assertRaises(EmptyManifestError):
            stratified_kfold(Manifest([]), k=10)


class ManifestTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        manifest = stratified_kfold(_records({2: 12, 5: 8}), k=4, seed=0)
        path = write_manifest(manifest, self.root / 'manifest.jsonl')
        loaded = read_manifest(path, check_paths=False)
        self.assertEqual(loaded.records, manifest.records)
        self.assertEqual((loaded.seed, loaded.generator_version, loaded.folds), (0, 'test', 4))
        self.assertEqual(loaded.gsd_counts(), {2: 12, 5: 8})

    def test_missing_files(self):
        path = write_manifest(_records({2: 2}), self.root / 'manifest.jsonl')
        with self.assertRaises(MissingFileError):
            read_manifest(path)

    def test_fold_out_of_range(self):
        manifest = stratified_kfold(_records({2: 12}), k=4, seed=0)
        manifest.folds = 2
        path = write_manifest(manifest, self.root / 'manifest.jsonl')
        with self.assertRaises(ManifestFormatError):
            read_manifest(path, check_paths=False)

    def test_empty(self):
        with self.assertRaises(EmptyManifestError):
            write_manifest(Manifest([]), self.root / 'manifest.jsonl')
        (self.root / 'empty.jsonl').write_text('')
        with self.assertRaises(EmptyManifestError):
            read_manifest(self.root / 'empty.jsonl')

    def test_header_required(self):
        (self.root / 'bad.jsonl').write_text('{"kind": "tile"}\n')
        with self.assertRaises(ManifestFormatError):
            read_manifest(self.root / 'bad.jsonl')


class StorageTests(SimpleTestCase):
    def test_paths(self):
        self.assertEqual(get_image_path('scene001', 5, 1, 2), 'tiles/5cm/scene001_5cm_1_2.png')
        self.assertEqual(get_mask_path('scene001', 5, 1, 2), 'tiles/5cm/scene001_5cm_1_2_mask.png')

    def test_save_and_load(self):
        rng = np.random.default_rng(0)
        sample = SampleTile(image=rng.integers(0, 256, (32, 32, 3), dtype=np.uint8),
                            mask=rng.integers(0, 2, (32, 32), dtype=np.uint8), gsd=7, scene='s', row=1, col=3)
        with tempfile.TemporaryDirectory() as tmp:
            image_path, mask_path = save_tile(sample, tmp)
            loaded = load_tile(tmp, image_path, mask_path, gsd=7)
        np.testing.assert_array_equal(loaded.image, sample.image)
        np.testing.assert_array_equal(loaded.mask, sample.mask)

    def test_missing_tile(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingFileError):
                load_tile(tmp, 'a.png', 'a_mask.png', gsd=2)


class SynthesisTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_small_dataset_is_reproducible(self):
        config = DataConfig(scenes=2, tile_px=256, gsds=(10, 20), folds=2)
        first = synthesize(self.root / 'a', config, seed=4)
        second = synthesize(self.root / 'b', config, seed=4)
        self.assertEqual(len(first), 2 * (4 + 1))
        self.assertEqual(manifest_digest(self.root / 'a' / 'manifest.jsonl'),
                         manifest_digest(self.root / 'b' / 'manifest.jsonl'))
        loaded = read_manifest(self.root / 'a' / 'manifest.jsonl')
        tiles = loaded.load()
        self.assertEqual(tiles[0].image.shape, (256, 256, 3))
        self.assertTrue((self.root / 'a' / 'resolution_histogram.csv').is_file())
        self.assertEqual(second.gsd_counts(), {10: 8, 20: 2})

    def test_all_resolutions_present(self):
        config = DataConfig(scenes=1, tile_px=256, folds=2)
        manifest = synthesize(self.root / 'full', config, seed=0)
        self.assertEqual(set(manifest.gsd_counts()), set(GSD_CHOICES))
        self.assertEqual(manifest.gsd_counts(), tiles_per_scene(config))
        self.assertEqual(len(manifest), 159)

    def test_weighted_subsample(self):
        tiles = [SampleTile(image=np.zeros((1, 1, 3), dtype=np.uint8), mask=np.zeros((1, 1), dtype=np.uint8), gsd=g)
                 for g, n in ((2, 40), (3, 40)) for _ in range(n)]
        kept = subsample_by_weight(tiles, {2: 3.0, 3: 1.0}, seed=0)
        self.assertEqual(Counter(t.gsd for t in kept), {2: 40, 3: 13})

    def test_config_validation(self):
        with self.assertRaises(DataError):
            DataConfig(tile_px=100)
        with self.assertRaises(DataError):
            DataConfig(gsds=(9,))
        with self.assertRaises(DataError):
            DataConfig(folds=4, val_fold=4)
        with self.assertRaises(DataError):
            DataConfig.from_dict({'tiles': 3})
        self.assertEqual(DataConfig(gsd_weights='source').weights()[5], 8028.0)
        self.assertEqual(DataConfig(tile_px=256).tile_stride, 256)
