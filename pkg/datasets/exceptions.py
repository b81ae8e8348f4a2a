# -*- coding: utf-8 -*-


class DataError(RuntimeError):
    """数据集相关错误的基类（CLI 退出码 2）"""


class MissingFileError(DataError):
    pass


class EmptyManifestError(DataError):
    pass


class WindowError(DataError):
    """窗口或裁剪尺寸大于图像"""


class UnsupportedGSDError(DataError):
    pass


class ManifestFormatError(DataError):
    pass
