"""Weekly Flow 测试套件"""
