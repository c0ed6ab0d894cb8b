from unittest.mock import MagicMock, patch

from app.core.workers import ordered_map


def _square(x: int) -> int:
    return x * x


def test_serial_map_keeps_order():
    """Test the in-process path"""
    assert ordered_map(_square, [3, 1, 2]) == [9, 1, 4]


def test_single_task_skips_pool():
    """Test no pool is created for one task"""
    with patch("app.core.workers.ProcessPoolExecutor") as mock_pool:
        assert ordered_map(_square, [5], workers=4) == [25]
        mock_pool.assert_not_called()


def test_pool_used_for_many_workers():
    """Test tasks go through the executor map in input order"""
    pool = MagicMock()
    pool.__enter__.return_value = pool
    pool.map.side_effect = lambda fn, tasks: [fn(task) for task in tasks]
    with patch("app.core.workers.ProcessPoolExecutor", return_value=pool) as mock_pool:
        result = ordered_map(_square, [1, 2, 3], workers=2)

    assert result == [1, 4, 9]
    mock_pool.assert_called_once_with(max_workers=2)
