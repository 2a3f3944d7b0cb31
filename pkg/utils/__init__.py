"""
Utils package for HNSC mesh codec
"""
